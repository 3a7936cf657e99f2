use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::SkelError;

/// Joint graph of a 2D skeleton. Axis convention: x to the right, y up.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonTopology {
    pub name: String,
    pub joint_names: Vec<String>,
    /// Bones, as unordered joint-index pairs.
    pub edges: Vec<(usize, usize)>,
    /// Left/right counterpart of every joint; midline joints map to themselves.
    pub swap: Vec<usize>,
}

pub const NOSE: usize = 0;
pub const NECK: usize = 1;
pub const R_SHOULDER: usize = 2;
pub const R_ELBOW: usize = 3;
pub const R_WRIST: usize = 4;
pub const L_SHOULDER: usize = 5;
pub const L_ELBOW: usize = 6;
pub const L_WRIST: usize = 7;
pub const R_HIP: usize = 8;
pub const R_KNEE: usize = 9;
pub const R_ANKLE: usize = 10;
pub const L_HIP: usize = 11;
pub const L_KNEE: usize = 12;
pub const L_ANKLE: usize = 13;
pub const R_EYE: usize = 14;
pub const L_EYE: usize = 15;
pub const R_EAR: usize = 16;
pub const L_EAR: usize = 17;

impl SkeletonTopology {
    /// The 18-joint body layout (nose, neck, arms, legs, eyes, ears).
    pub fn body18() -> Self {
        let names = [
            "nose", "neck", "r_shoulder", "r_elbow", "r_wrist", "l_shoulder", "l_elbow", "l_wrist", "r_hip",
            "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle", "r_eye", "l_eye", "r_ear", "l_ear",
        ];
        let edges = vec![
            (R_WRIST, R_ELBOW),
            (R_ELBOW, R_SHOULDER),
            (L_WRIST, L_ELBOW),
            (L_ELBOW, L_SHOULDER),
            (L_ANKLE, L_KNEE),
            (L_KNEE, L_HIP),
            (R_ANKLE, R_KNEE),
            (R_KNEE, R_HIP),
            (L_HIP, L_SHOULDER),
            (R_HIP, R_SHOULDER),
            (L_SHOULDER, NECK),
            (R_SHOULDER, NECK),
            (NOSE, NECK),
            (L_EYE, NOSE),
            (R_EYE, NOSE),
            (L_EAR, L_EYE),
            (R_EAR, R_EYE),
        ];
        let mut swap: Vec<usize> = (0..18).collect();
        for (r, l) in [
            (R_SHOULDER, L_SHOULDER),
            (R_ELBOW, L_ELBOW),
            (R_WRIST, L_WRIST),
            (R_HIP, L_HIP),
            (R_KNEE, L_KNEE),
            (R_ANKLE, L_ANKLE),
            (R_EYE, L_EYE),
            (R_EAR, L_EAR),
        ] {
            swap[r] = l;
            swap[l] = r;
        }
        Self {
            name: "body18".into(),
            joint_names: names.iter().map(|s| s.to_string()).collect(),
            edges,
            swap,
        }
    }

    pub fn joints(&self) -> usize {
        self.joint_names.len()
    }

    pub fn is_connected(&self) -> bool {
        let n = self.joints();
        if n == 0 {
            return false;
        }
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Checks index ranges, the swap involution and connectivity.
    pub fn validate(&self) -> Result<(), SkelError> {
        let n = self.joints();
        if n == 0 {
            return Err(SkelError::Contract("topology has no joints".into()));
        }
        if let Some(&(a, b)) = self.edges.iter().find(|&&(a, b)| a >= n || b >= n || a == b) {
            return Err(SkelError::Contract(format!("invalid bone ({a}, {b}) for {n} joints")));
        }
        if self.swap.len() != n {
            return Err(SkelError::Contract(format!("swap map has {} entries for {n} joints", self.swap.len())));
        }
        if self.swap.iter().enumerate().any(|(i, &s)| s >= n || self.swap[s] != i) {
            return Err(SkelError::Contract("swap map is not an involution".into()));
        }
        if !self.is_connected() {
            return Err(SkelError::Contract("topology is not connected".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn body18_is_valid() {
        let t = SkeletonTopology::body18();
        assert_eq!(t.joints(), 18);
        assert_eq!(t.edges.len(), 17);
        t.validate().unwrap();
    }

    #[test]
    fn swap_must_be_involution() {
        let mut t = SkeletonTopology::body18();
        t.swap[R_WRIST] = L_ELBOW;
        assert!(t.validate().is_err());
    }

    #[test]
    fn disconnected_rejected() {
        let mut t = SkeletonTopology::body18();
        t.edges.retain(|&e| e != (L_EAR, L_EYE));
        assert!(!t.is_connected());
        assert!(t.validate().is_err());
    }
}
