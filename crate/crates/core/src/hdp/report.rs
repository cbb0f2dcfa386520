use serde::{Deserialize, Serialize};

use super::HdpState;
use crate::quantize::Vocabulary;
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordSummary {
    pub word: usize,
    pub v_bin: usize,
    pub t_bin: usize,
    /// Velocity and hour bin centers.
    pub velocity: f64,
    pub hour: f64,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSummary {
    pub topic: usize,
    pub weight: f64,
    pub words: usize,
    pub top: Vec<WordSummary>,
}

/// Topics by decreasing global weight, each with its `top` most likely
/// words decoded into velocity and hour bins.
pub fn topic_report<F: Real>(state: &HdpState<F>, vocab: &Vocabulary<F>, top: usize) -> Vec<TopicSummary> {
    let mut out: Vec<TopicSummary> = (0..state.k())
        .map(|t| {
            let mut ids: Vec<usize> = (0..state.vocab_size).collect();
            ids.sort_by(|&a, &b| state.theta[t][b].partial_cmp(&state.theta[t][a]).expect("finite").then(a.cmp(&b)));
            let top = ids
                .into_iter()
                .take(top)
                .filter_map(|w| {
                    let id = vocab.decode(w).ok()?;
                    Some(WordSummary {
                        word: w,
                        v_bin: id.v_bin,
                        t_bin: id.t_bin,
                        velocity: vocab.velocity.centers[id.v_bin][0].f64(),
                        hour: vocab.time.centers[id.t_bin][0].f64(),
                        prob: state.theta[t][w].f64(),
                    })
                })
                .collect();
            TopicSummary { topic: t, weight: state.beta[t].f64(), words: state.topic_total(t) as usize, top }
        })
        .collect();
    out.sort_by(|a, b| b.weight.partial_cmp(&a.weight).expect("finite").then(a.topic.cmp(&b.topic)));
    out
}

#[cfg(test)]
mod tests {
    use super::super::tests::corpus;
    use super::super::*;
    use super::*;
    use crate::quantize::Codebook;

    #[test]
    fn report_orders_topics_and_words() {
        let vocab = Vocabulary {
            velocity: Codebook { lambda: 1.0, centers: vec![vec![3.0], vec![12.0]], circular_dims: vec![] },
            time: Codebook { lambda: 1.0, centers: vec![vec![8.0], vec![17.0]], circular_dims: vec![0] },
        };
        let c = corpus(vec![vec![0, 0, 0, 3], vec![3, 3]], 4);
        let mut s = init_from_labels::<f64>(&c, HdpHyper::default(), &[vec![0, 0, 0, 1], vec![1, 1]], 0).unwrap();
        s.beta = vec![0.2, 0.7, 0.1];
        s.theta = vec![vec![0.7, 0.1, 0.1, 0.1], vec![0.05, 0.05, 0.1, 0.8]];
        let r = topic_report(&s, &vocab, 2);
        assert_eq!(r[0].topic, 1);
        assert_eq!(r[0].top[0].word, 3);
        // word 3 is velocity bin 1 at time bin 1
        assert_eq!((r[0].top[0].velocity, r[0].top[0].hour), (12.0, 17.0));
        assert_eq!(r[1].top[0].word, 0);
        assert_eq!(r[1].words, 3);
    }
}
