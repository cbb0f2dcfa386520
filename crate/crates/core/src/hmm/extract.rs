use rayon::prelude::*;

use super::{viterbi, HmmError, HmmModel};
use crate::corpus::{Corpus, Document};
use crate::quantize::Vocabulary;
use crate::real::Real;
use crate::trips::Trip;

/// One document per road segment holding the quantized signal words of every
/// observation decoded onto that segment. Augmented copies of a road feed the
/// same document.
pub fn extract_corpus<F: Real>(model: &HmmModel<F>, trips: &[Trip<F>], vocab: &Vocabulary<F>) -> Result<Corpus, HmmError> {
    for trip in trips {
        let signals = trip
            .signals
            .as_ref()
            .ok_or_else(|| HmmError::Signals { trip: trip.id.clone(), reason: "no velocity/time-of-day stream".into() })?;
        if signals.velocity.len() != trip.obs.len() || signals.hour.len() != trip.obs.len() {
            return Err(HmmError::Signals {
                trip: trip.id.clone(),
                reason: format!("{} signal samples for {} observations", signals.velocity.len(), trip.obs.len()),
            });
        }
    }
    let paths: Vec<Vec<usize>> = trips.par_iter().map(|t| viterbi(model, t).map(|d| d.path)).collect::<Result<_, _>>()?;
    let mut docs: Vec<Document> = (0..model.n_roads()).map(|r| Document { id: r, words: Vec::new() }).collect();
    for (trip, path) in trips.iter().zip(&paths) {
        let s = trip.signals.as_ref().expect("checked above");
        for (t, &x) in path.iter().enumerate() {
            if let Some(r) = model.states[x].road() {
                docs[r].words.push(vocab.encode(s.velocity[t], s.hour[t]).flat);
            }
        }
    }
    Ok(Corpus::new(vocab.size(), docs).expect("encoded words lie inside the vocabulary"))
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::super::{EmissionParams, StateKind};
    use super::*;
    use crate::quantize::Codebook;
    use crate::trips::SignalStream;

    fn vocab() -> Vocabulary<f64> {
        Vocabulary {
            velocity: Codebook { lambda: 2.0, centers: vec![vec![5.0], vec![15.0]], circular_dims: vec![] },
            time: Codebook { lambda: 1.5, centers: vec![vec![8.0], vec![18.0]], circular_dims: vec![0] },
        }
    }

    fn model() -> HmmModel<f64> {
        let e = |x: f64| EmissionParams::isotropic([x, 0.0], 25.0, 0.0, 0.1, 0.1);
        let mut states = vec![StateKind::Source(0), StateKind::Destination(0)];
        states.extend((0..4).map(StateKind::Road));
        let mut trans = vec![vec![(5, 1.0)], vec![(1, 1.0)]];
        trans.extend((0..4).map(|_| vec![(1, 0.5), (5, 0.5)]));
        let mut theta0 = vec![0.0; 6];
        theta0[0] = 1.0;
        model_from(states, theta0, trans, vec![e(0.0), e(500.0), e(-900.0), e(-700.0), e(-800.0), e(100.0)])
    }

    fn trip(signals: Option<SignalStream<f64>>) -> Trip<f64> {
        let o = vec![
            obs(0.0, 0.0, 0.0, 0.0, true, false),
            obs(1.0, 95.0, 0.0, 0.0, false, false),
            obs(2.0, 105.0, 0.0, 0.0, false, false),
            obs(3.0, 500.0, 0.0, 0.0, false, true),
        ];
        let t = Trip::new("a", o).unwrap();
        match signals {
            Some(s) => t.with_signals(s).unwrap(),
            None => t,
        }
    }

    #[test]
    fn all_words_land_on_one_road() {
        let s = SignalStream { velocity: vec![0.0, 14.0, 6.0, 0.0], hour: vec![8.0, 8.1, 17.5, 8.2] };
        let c = extract_corpus(&model(), &[trip(Some(s))], &vocab()).unwrap();
        assert_eq!(c.num_docs(), 4);
        assert_eq!(c.non_empty_docs(), 1);
        // road 3 is the state at x = 100
        assert_eq!(c.docs[3].words, vec![2, 1]);
        assert_eq!(c.num_words(), 2);
    }

    #[test]
    fn missing_or_short_signals_are_errors() {
        assert!(matches!(extract_corpus(&model(), &[trip(None)], &vocab()), Err(HmmError::Signals { .. })));
        let mut t = trip(Some(SignalStream { velocity: vec![0.0; 4], hour: vec![0.0; 4] }));
        t.signals.as_mut().unwrap().hour.pop();
        assert!(matches!(extract_corpus(&model(), &[t], &vocab()), Err(HmmError::Signals { .. })));
    }
}
