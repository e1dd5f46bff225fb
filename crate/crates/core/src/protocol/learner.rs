//! Learner state. Execution itself lives on the site because it reads the
//! request set shared with the co-located coordinator.

use std::collections::{BTreeSet, HashSet};

use crate::types::{InstanceId, RequestId, Tick, Value};

#[derive(Clone, Debug, Default)]
pub struct Learner {
    /// Every instance up to here has been executed.
    pub executed_upto: InstanceId,
    pub executed: HashSet<RequestId>,
    /// Values learned whose payload is being fetched.
    pub pending_fetch: BTreeSet<Value>,
    pub last_progress: Tick,
}

impl Learner {
    /// Split `members` of the next instance into the ids executed now,
    /// skipping any already executed.
    pub fn execute(&mut self, members: impl IntoIterator<Item = RequestId>) -> Vec<RequestId> {
        let mut fresh = Vec::new();
        for id in members {
            if self.executed.insert(id) {
                fresh.push(id);
            }
        }
        self.executed_upto += 1;
        fresh
    }
}
