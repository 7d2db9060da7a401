//! State space of the N-class latest-only priority queue.
//!
//! A state records which class occupies the server (0 = idle) and which
//! per-class waiting buffers hold a packet. The server is work-conserving,
//! so the only idle state is the one with every buffer empty; all generator
//! and moment machinery indexes states through the closed-form map
//! `sigma` implemented by [`StateSpace`].

use crate::error::{Error, Result};

/// Hard cap on the class count. The state space has `1 + N * 2^N` states and
/// everything downstream stores dense `|Q| x |Q|` matrices, so this keeps the
/// largest supported dimension at 10241.
pub const MAX_CLASSES: usize = 10;

/// A queue state: the class in service plus the buffer occupancy flags.
///
/// Classes are numbered 1..=N; class 0 means "idle". Buffer occupancy is a
/// bitmask with bit `i - 1` set when the class-`i` buffer holds a packet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SystemState {
    in_service: u8,
    occupancy: u16,
}

impl SystemState {
    /// The canonical idle state: no class in service, all buffers empty.
    pub const IDLE: SystemState = SystemState {
        in_service: 0,
        occupancy: 0,
    };

    /// Builds a state, rejecting the non-canonical idle forms (`J = 0` with a
    /// nonempty buffer), which the state indexing collapses away.
    pub fn new(in_service: usize, occupancy: u16) -> Result<Self> {
        if in_service == 0 && occupancy != 0 {
            return Err(Error::config(
                "idle state must have all buffers empty (work-conserving server)",
            ));
        }
        if in_service > MAX_CLASSES {
            return Err(Error::config(format!(
                "class in service {in_service} exceeds the supported maximum {MAX_CLASSES}"
            )));
        }
        Ok(SystemState {
            in_service: in_service as u8,
            occupancy,
        })
    }

    /// Class currently in service; 0 when idle.
    pub fn class_in_service(&self) -> usize {
        self.in_service as usize
    }

    pub fn is_idle(&self) -> bool {
        self.in_service == 0
    }

    /// Whether the buffer of `class` (1-based) holds a packet.
    pub fn buffer_occupied(&self, class: usize) -> bool {
        debug_assert!(class >= 1);
        self.occupancy & (1 << (class - 1)) != 0
    }

    /// Raw occupancy bitmask (bit `i - 1` for class `i`).
    pub fn occupancy_mask(&self) -> u16 {
        self.occupancy
    }

    /// The class selected after a service completion: the highest-priority
    /// (lowest-index) occupied buffer, or 0 when every buffer is empty.
    pub fn next_class(&self) -> usize {
        if self.occupancy == 0 {
            0
        } else {
            self.occupancy.trailing_zeros() as usize + 1
        }
    }

    /// State reached immediately after a service completion: the next class
    /// moves from its buffer into service (its buffer is cleared), or the
    /// server idles when all buffers are empty.
    ///
    /// Panics if called on the idle state; there is no completion to take.
    pub fn after_completion(&self) -> SystemState {
        assert!(
            !self.is_idle(),
            "after_completion is undefined for the idle state"
        );
        let next = self.next_class();
        if next == 0 {
            SystemState::IDLE
        } else {
            SystemState {
                in_service: next as u8,
                occupancy: self.occupancy & (self.occupancy - 1),
            }
        }
    }

    /// State reached when a class-`k` packet arrives. An idle server starts
    /// serving the packet; a busy server stores it in the class buffer. If
    /// the buffer is already occupied the fresh packet replaces the waiting
    /// one, which leaves the state unchanged (latest-only buffering).
    pub fn after_arrival(&self, class: usize) -> SystemState {
        debug_assert!((1..=MAX_CLASSES).contains(&class));
        if self.is_idle() {
            SystemState {
                in_service: class as u8,
                occupancy: 0,
            }
        } else {
            SystemState {
                in_service: self.in_service,
                occupancy: self.occupancy | (1 << (class - 1)),
            }
        }
    }
}

/// The enumerated state space for `N` classes, ordered by the index map
/// `sigma`: the idle state gets 1, and a busy state `(J, B)` gets
/// `2 + 2^N (J - 1) + sum_i 2^(i-1) B_i`. Internally everything is stored
/// 0-based (`index = sigma - 1`); `sigma` itself is only exposed 1-based.
#[derive(Clone, Debug)]
pub struct StateSpace {
    n_classes: usize,
    states: Vec<SystemState>,
    /// 0-based index of the post-completion state, `None` for idle.
    dest: Vec<Option<usize>>,
    /// `next_class` per state.
    next: Vec<usize>,
}

impl StateSpace {
    /// Enumerates all `1 + N * 2^N` states in `sigma` order.
    pub fn enumerate(n_classes: usize) -> Result<Self> {
        if n_classes == 0 || n_classes > MAX_CLASSES {
            return Err(Error::config(format!(
                "class count must be in 1..={MAX_CLASSES}, got {n_classes}"
            )));
        }
        let mut states = Vec::with_capacity(1 + n_classes * (1 << n_classes));
        states.push(SystemState::IDLE);
        for j in 1..=n_classes {
            for mask in 0..(1u16 << n_classes) {
                states.push(SystemState {
                    in_service: j as u8,
                    occupancy: mask,
                });
            }
        }
        let space = StateSpace {
            n_classes,
            dest: states
                .iter()
                .map(|s| {
                    if s.is_idle() {
                        None
                    } else {
                        Some(Self::sigma_closed_form(n_classes, &s.after_completion()) - 1)
                    }
                })
                .collect(),
            next: states.iter().map(SystemState::next_class).collect(),
            states,
        };
        Ok(space)
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Number of states, `|Q| = 1 + N * 2^N`.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn states(&self) -> &[SystemState] {
        &self.states
    }

    pub fn state(&self, index: usize) -> SystemState {
        self.states[index]
    }

    fn sigma_closed_form(n_classes: usize, s: &SystemState) -> usize {
        if s.is_idle() {
            1
        } else {
            2 + (1 << n_classes) * (s.class_in_service() - 1) + s.occupancy_mask() as usize
        }
    }

    /// 1-based state index as used in all rate-matrix definitions.
    pub fn sigma(&self, s: &SystemState) -> usize {
        Self::sigma_closed_form(self.n_classes, s)
    }

    /// 0-based position of a state in vectors and matrices (`sigma - 1`).
    pub fn index_of(&self, s: &SystemState) -> usize {
        self.sigma(s) - 1
    }

    /// 0-based index of `dest(state)`, `None` for the idle state.
    pub fn dest_index(&self, index: usize) -> Option<usize> {
        self.dest[index]
    }

    /// `next_class` of the state at `index`.
    pub fn next_of(&self, index: usize) -> usize {
        self.next[index]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn st(j: usize, bits: &[u8]) -> SystemState {
        let mut mask = 0u16;
        for (i, b) in bits.iter().enumerate() {
            if *b != 0 {
                mask |= 1 << i;
            }
        }
        SystemState::new(j, mask).unwrap()
    }

    #[test]
    fn enumerate_counts() {
        assert_eq!(StateSpace::enumerate(1).unwrap().len(), 3);
        assert_eq!(StateSpace::enumerate(2).unwrap().len(), 9);
        assert_eq!(StateSpace::enumerate(3).unwrap().len(), 25);
    }

    #[test]
    fn enumerate_rejects_out_of_range() {
        assert!(StateSpace::enumerate(0).is_err());
        assert!(StateSpace::enumerate(11).is_err());
    }

    #[test]
    fn sigma_closed_form_example() {
        let space = StateSpace::enumerate(2).unwrap();
        assert_eq!(space.sigma(&st(2, &[1, 0])), 7); // 2 + 4*1 + 1
        assert_eq!(space.sigma(&SystemState::IDLE), 1);
    }

    #[test]
    fn sigma_is_contiguous_bijection() {
        for n in 1..=5 {
            let space = StateSpace::enumerate(n).unwrap();
            let mut seen = vec![false; space.len()];
            for s in space.states() {
                let sigma = space.sigma(s);
                assert!((1..=space.len()).contains(&sigma));
                assert!(!seen[sigma - 1], "sigma collision at {sigma}");
                seen[sigma - 1] = true;
                // index_of round-trips through the stored order
                assert_eq!(space.state(space.index_of(s)), *s);
            }
            assert!(seen.iter().all(|&b| b));
        }
    }

    #[test]
    fn next_class_examples() {
        assert_eq!(st(1, &[0, 1, 1]).next_class(), 2);
        assert_eq!(st(3, &[0, 0, 0]).next_class(), 0);
        assert_eq!(st(2, &[1, 1, 1]).next_class(), 1);
    }

    #[test]
    fn after_completion_examples() {
        assert_eq!(st(1, &[0, 1, 0]).after_completion(), st(2, &[0, 0, 0]));
        assert_eq!(st(2, &[0, 0, 0]).after_completion(), SystemState::IDLE);
        assert_eq!(st(1, &[1, 0, 1]).after_completion(), st(1, &[0, 0, 1]));
    }

    #[test]
    #[should_panic(expected = "idle")]
    fn after_completion_panics_on_idle() {
        let _ = SystemState::IDLE.after_completion();
    }

    #[test]
    fn after_arrival_examples() {
        assert_eq!(SystemState::IDLE.after_arrival(2), st(2, &[0, 0, 0]));
        assert_eq!(st(1, &[0, 0, 0]).after_arrival(3), st(1, &[0, 0, 1]));
        // replacement: state unchanged
        assert_eq!(st(1, &[0, 0, 1]).after_arrival(3), st(1, &[0, 0, 1]));
    }

    #[test]
    fn idle_with_occupied_buffer_is_unrepresentable() {
        assert!(SystemState::new(0, 0b1).is_err());
    }

    proptest! {
        #[test]
        fn completion_lands_in_space(n in 1usize..=5, idx in 0usize..1000) {
            let space = StateSpace::enumerate(n).unwrap();
            let s = space.state(idx % space.len());
            if !s.is_idle() {
                let d = s.after_completion();
                // canonical: never idle with a nonempty buffer
                prop_assert!(!(d.is_idle() && d.occupancy_mask() != 0));
                prop_assert!(space.index_of(&d) < space.len());
                if s.next_class() != 0 {
                    prop_assert_eq!(d.class_in_service(), s.next_class());
                }
            }
        }

        #[test]
        fn arrival_is_idempotent_on_full_buffer(n in 1usize..=5, idx in 0usize..1000, k in 1usize..=5) {
            let space = StateSpace::enumerate(n).unwrap();
            let s = space.state(idx % space.len());
            let k = (k - 1) % n + 1;
            if !s.is_idle() && s.buffer_occupied(k) {
                prop_assert_eq!(s.after_arrival(k), s);
                prop_assert_eq!(s.after_arrival(k).after_arrival(k), s);
            }
        }
    }
}
