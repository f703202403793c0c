use std::collections::VecDeque;

use rand::Rng as _;

use crate::env::{ImageObs, Observation};
use crate::error::{Error, Result};
use crate::geometry::stack_frames;
use crate::rng::Rng;

/// One replay record. Observations are already frame-stacked.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Observation,
    pub done: bool,
}

/// Fixed-capacity FIFO ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be at least 1".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            items: Vec::new(),
            cursor: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Inserts `t`, overwriting the oldest entry once full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// Entries from oldest to newest.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.cursor };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// `batch` indices drawn uniformly with replacement.
    pub fn sample_indices(&self, batch: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        if self.items.len() < batch {
            return Err(Error::State(format!(
                "replay buffer holds {} transitions, batch needs {batch}",
                self.items.len()
            )));
        }
        Ok((0..batch).map(|_| rng.random_range(0..self.items.len())).collect())
    }
}

/// Concatenates observations of consecutive steps: clouds along the point
/// axis with one-hot frame tags, images along the channel axis.
pub fn stack_observations(frames: &[&Observation]) -> Result<Observation> {
    match frames.first() {
        None => Err(Error::dim("stacking needs at least one frame")),
        Some(Observation::Cloud(_)) => {
            let clouds = frames
                .iter()
                .map(|f| match f {
                    Observation::Cloud(c) => Ok(c.clone()),
                    _ => Err(Error::dim("cannot stack images with point clouds")),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Observation::Cloud(stack_frames(&clouds)?))
        }
        Some(Observation::Image(_)) => {
            let imgs = frames
                .iter()
                .map(|f| match f {
                    Observation::Image(i) => Ok(i),
                    _ => Err(Error::dim("cannot stack point clouds with images")),
                })
                .collect::<Result<Vec<&ImageObs>>>()?;
            Ok(Observation::Image(ImageObs::stack(&imgs)?))
        }
    }
}

/// Rolling window of the last `k` raw observations. A reset fills the window
/// with copies of the first observation.
#[derive(Debug, Clone)]
pub struct FrameStack {
    k: usize,
    frames: VecDeque<Observation>,
}

impl FrameStack {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("frame stack depth must be at least 1".into()));
        }
        Ok(FrameStack {
            k,
            frames: VecDeque::with_capacity(k),
        })
    }

    pub fn reset(&mut self, obs: Observation) -> Result<Observation> {
        self.frames.clear();
        for _ in 0..self.k {
            self.frames.push_back(obs.clone());
        }
        self.current()
    }

    pub fn push(&mut self, obs: Observation) -> Result<Observation> {
        if self.frames.is_empty() {
            return self.reset(obs);
        }
        self.frames.pop_front();
        self.frames.push_back(obs);
        self.current()
    }

    pub fn current(&self) -> Result<Observation> {
        let refs: Vec<&Observation> = self.frames.iter().collect();
        stack_observations(&refs)
    }
}
