/// A state observed in a trajectory: either a tabular state index or a
/// continuous/integer feature vector.
#[derive(Debug, Clone, PartialEq)]
pub enum State {
    Index(usize),
    Features(Vec<f64>),
}

impl State {
    pub fn index(&self) -> Option<usize> {
        match self {
            State::Index(i) => Some(*i),
            State::Features(_) => None,
        }
    }

    pub fn features(&self) -> Option<&[f64]> {
        match self {
            State::Index(_) => None,
            State::Features(f) => Some(f),
        }
    }

    pub fn expect_index(&self) -> usize {
        match self {
            State::Index(i) => *i,
            State::Features(f) => panic!("expected tabular state index, got feature vector {f:?}"),
        }
    }
}

impl From<usize> for State {
    fn from(i: usize) -> Self {
        State::Index(i)
    }
}
