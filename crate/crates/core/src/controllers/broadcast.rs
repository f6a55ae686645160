use nalgebra::DVector;

/// Most recently received input from one sender.
#[derive(Clone, Debug, PartialEq)]
pub struct BroadcastEntry {
    pub u: DVector<f64>,
    /// Sender's sampling time; `None` until the first reception.
    pub stamp: Option<f64>,
}

/// Inputs each team member last heard from every other member. Entries start
/// at zero before the first reception and delivery is instantaneous.
#[derive(Clone, Debug, PartialEq)]
pub struct BroadcastTable {
    members: Vec<usize>,
    /// `entries[receiver][sender]`, indexed by agent id.
    entries: Vec<Vec<Option<BroadcastEntry>>>,
}

impl BroadcastTable {
    /// `input_dims` lists every agent's input dimension; only `members` get entries.
    pub fn new(input_dims: &[usize], members: &[usize]) -> Self {
        let n = input_dims.len();
        let mut entries = vec![vec![None; n]; n];
        for &r in members {
            for &s in members {
                if r != s {
                    entries[r][s] = Some(BroadcastEntry { u: DVector::zeros(input_dims[s]), stamp: None });
                }
            }
        }
        Self { members: members.to_vec(), entries }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn is_member(&self, agent: usize) -> bool {
        self.members.contains(&agent)
    }

    /// Delivers `sender`'s new input to every other member.
    pub fn broadcast(&mut self, sender: usize, u: &DVector<f64>, time: f64) {
        if !self.is_member(sender) {
            return;
        }
        for &r in &self.members {
            if let Some(e) = self.entries[r][sender].as_mut() {
                e.u.copy_from(u);
                e.stamp = Some(time);
            }
        }
    }

    pub fn get(&self, receiver: usize, sender: usize) -> Option<&BroadcastEntry> {
        self.entries.get(receiver)?.get(sender)?.as_ref()
    }

    /// Input of `sender` as known to `receiver`, zero if nothing arrived yet.
    pub fn input(&self, receiver: usize, sender: usize) -> Option<&DVector<f64>> {
        self.get(receiver, sender).map(|e| &e.u)
    }
}
