use nalgebra::DVector;
use rand::Rng;

use super::ProposalRecord;
use crate::{Error, Result};

/// Output of the independence Metropolis–Hastings correction.
#[derive(Debug, Clone, Default)]
pub struct ChainResult {
    /// `v⁰ = v_ref` followed by one state per proposal.
    pub states: Vec<DVector<f64>>,
    pub log_weights: Vec<f64>,
    /// One flag per proposal.
    pub accepted: Vec<bool>,
    pub acceptance_probability: f64,
    /// Proposals dropped because their optimisation did not converge.
    pub unconverged: usize,
    pub setup_seconds: f64,
    pub proposal_seconds: f64,
    pub mh_seconds: f64,
}

impl ChainResult {
    /// States after the initial point, one per proposal.
    pub fn samples(&self) -> &[DVector<f64>] {
        &self.states[1..]
    }

    pub fn num_samples(&self) -> usize {
        self.accepted.len()
    }

    /// Wall clock of the sampling loop (proposals plus correction).
    pub fn online_seconds(&self) -> f64 {
        self.proposal_seconds + self.mh_seconds
    }

    /// Column `i` of the sample matrix.
    pub fn column(&self, i: usize) -> Vec<f64> {
        self.samples().iter().map(|s| s[i]).collect()
    }
}

/// Sequential accept/reject over `proposals`, starting from `start` with
/// log-weight `start_log_weight`. Proposal `i` is accepted when
/// `t < exp(log w_prop - log w_prev)` for `t ~ U[0, 1)`; unconverged
/// proposals are always rejected. One uniform is drawn per proposal.
pub fn mh_correct<R: Rng + ?Sized>(
    proposals: &[ProposalRecord],
    start: &DVector<f64>,
    start_log_weight: f64,
    uniforms: &mut R,
) -> Result<ChainResult> {
    if proposals.is_empty() {
        return Err(Error::InvalidInput("no proposals to correct".into()));
    }
    let mut states = Vec::with_capacity(proposals.len() + 1);
    let mut log_weights = Vec::with_capacity(proposals.len() + 1);
    let mut accepted = Vec::with_capacity(proposals.len());
    states.push(start.clone());
    log_weights.push(start_log_weight);
    let mut current = start_log_weight;
    let mut unconverged = 0;
    for p in proposals {
        let t: f64 = uniforms.random();
        let ok = if !p.converged {
            unconverged += 1;
            false
        } else if current == f64::NEG_INFINITY {
            // Any usable proposal leaves a zero-weight state.
            p.log_weight > f64::NEG_INFINITY
        } else {
            t < (p.log_weight - current).exp()
        };
        if ok {
            current = p.log_weight;
            states.push(p.v_prop.clone());
        } else {
            states.push(states.last().expect("non-empty").clone());
        }
        log_weights.push(current);
        accepted.push(ok);
    }
    let acceptance_probability =
        accepted.iter().filter(|a| **a).count() as f64 / accepted.len() as f64;
    Ok(ChainResult {
        states,
        log_weights,
        accepted,
        acceptance_probability,
        unconverged,
        ..Default::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn record(x: f64, lw: f64, converged: bool) -> ProposalRecord {
        ProposalRecord {
            xi: DVector::from_element(1, x),
            v_prop: DVector::from_element(1, x),
            log_weight: lw,
            converged,
            iterations: 1,
        }
    }

    #[test]
    fn equal_weights_accept_everything() {
        let props: Vec<_> = (0..50).map(|i| record(i as f64, -3.0, true)).collect();
        let mut u = rng::stream(1, rng::MH_UNIFORMS, 0);
        let c = mh_correct(&props, &DVector::zeros(1), -3.0, &mut u).unwrap();
        assert_eq!(c.acceptance_probability, 1.0);
        assert_eq!(c.states.len(), 51);
    }

    #[test]
    fn zero_weight_and_unconverged_are_rejected() {
        let props = vec![
            record(1.0, f64::NEG_INFINITY, true),
            record(2.0, 10.0, false),
            record(3.0, 0.0, true),
        ];
        let mut u = rng::stream(1, rng::MH_UNIFORMS, 0);
        let c = mh_correct(&props, &DVector::zeros(1), 0.0, &mut u).unwrap();
        assert_eq!(c.accepted, vec![false, false, true]);
        assert_eq!(c.unconverged, 1);
    }

    #[test]
    fn rejection_repeats_previous_state() {
        let props: Vec<_> = (0..200)
            .map(|i| record(i as f64 + 1.0, if i % 2 == 0 { 0.0 } else { -1.0 }, true))
            .collect();
        let mut u = rng::stream(4, rng::MH_UNIFORMS, 0);
        let c = mh_correct(&props, &DVector::zeros(1), 0.0, &mut u).unwrap();
        for i in 0..props.len() {
            let same = c.states[i + 1] == c.states[i];
            assert_eq!(same, !c.accepted[i]);
        }
    }

    #[test]
    fn empty_is_rejected() {
        let mut u = rng::stream(1, rng::MH_UNIFORMS, 0);
        assert!(mh_correct(&[], &DVector::zeros(1), 0.0, &mut u).is_err());
    }
}
