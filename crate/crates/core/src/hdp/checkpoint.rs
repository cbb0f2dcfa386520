//! Sampler checkpoints: a JSON file with the continuous variables and a
//! little-endian binary file with labels and counts.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DocState, HdpError, HdpHyper, HdpState, SubCluster};
use crate::real::Real;

const MAGIC: &[u8; 4] = b"DTHC";
const VERSION: u32 = 1;
pub const STATE_FILE: &str = "hdp_state.json";
pub const COUNTS_FILE: &str = "hdp_counts.bin";

#[derive(Serialize, Deserialize)]
struct Meta<F> {
    format_version: u32,
    hyper: HdpHyper<F>,
    vocab_size: usize,
    iteration: u64,
    beta: Vec<F>,
    theta: Vec<Vec<F>>,
    beta_bar: Vec<[F; 2]>,
    theta_bar: Vec<[Vec<F>; 2]>,
    age: Vec<u32>,
    words: Vec<Vec<u32>>,
    pi: Vec<Vec<F>>,
    pib: Vec<Vec<[F; 2]>>,
}

/// Writes the two checkpoint files into `dir`, creating it if needed.
pub fn save_checkpoint<F: Real>(state: &HdpState<F>, dir: &Path) -> Result<(), HdpError> {
    fs::create_dir_all(dir)?;
    let meta = Meta {
        format_version: VERSION,
        hyper: state.hyper,
        vocab_size: state.vocab_size,
        iteration: state.iteration,
        beta: state.beta.clone(),
        theta: state.theta.clone(),
        beta_bar: state.sub.iter().map(|s| s.beta_bar).collect(),
        theta_bar: state.sub.iter().map(|s| s.theta_bar.clone()).collect(),
        age: state.sub.iter().map(|s| s.age).collect(),
        words: state.docs.iter().map(|d| d.words.clone()).collect(),
        pi: state.docs.iter().map(|d| d.pi.clone()).collect(),
        pib: state.docs.iter().map(|d| d.pib.clone()).collect(),
    };
    fs::write(dir.join(STATE_FILE), serde_json::to_vec(&meta)?)?;
    let k = state.k();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    for x in [VERSION, state.docs.len() as u32, k as u32] {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    for d in &state.docs {
        buf.extend_from_slice(&(d.len() as u32).to_le_bytes());
        d.z.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes()));
        buf.extend_from_slice(&d.zb);
        d.n.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes()));
        d.m.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes()));
        d.mb.iter().flatten().for_each(|x| buf.extend_from_slice(&x.to_le_bytes()));
    }
    fs::write(dir.join(COUNTS_FILE), buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], HdpError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| HdpError::Checkpoint("counts file is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, HdpError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn u32s(&mut self, n: usize) -> Result<Vec<u32>, HdpError> {
        (0..n).map(|_| self.u32()).collect()
    }
}

/// Reads a checkpoint written by [`save_checkpoint`] and checks that its
/// stored counts agree with its labels.
pub fn load_checkpoint<F: Real>(dir: &Path) -> Result<HdpState<F>, HdpError> {
    let meta: Meta<F> = serde_json::from_slice(&fs::read(dir.join(STATE_FILE))?)?;
    if meta.format_version != VERSION {
        return Err(HdpError::Checkpoint(format!("unsupported state version {}", meta.format_version)));
    }
    let raw = fs::read(dir.join(COUNTS_FILE))?;
    let mut r = Reader { buf: &raw, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(HdpError::Checkpoint("counts file has the wrong magic".into()));
    }
    let (version, n_docs, k) = (r.u32()?, r.u32()? as usize, r.u32()? as usize);
    if version != VERSION {
        return Err(HdpError::Checkpoint(format!("unsupported counts version {version}")));
    }
    if n_docs != meta.words.len() || k != meta.theta.len() || meta.beta.len() != k + 1 {
        return Err(HdpError::Checkpoint("state and counts files disagree on sizes".into()));
    }
    let mut docs = Vec::with_capacity(n_docs);
    let mut stored_n = Vec::with_capacity(n_docs);
    for (j, (words, (pi, pib))) in meta.words.into_iter().zip(meta.pi.into_iter().zip(meta.pib)).enumerate() {
        let len = r.u32()? as usize;
        if len != words.len() {
            return Err(HdpError::Checkpoint(format!("document {j} length differs between files")));
        }
        let z = r.u32s(len)?;
        let zb = r.take(len)?.to_vec();
        if z.iter().any(|&t| t as usize >= k) || zb.iter().any(|&h| h > 1) || pi.len() != k + 1 || pib.len() != k {
            return Err(HdpError::Checkpoint(format!("document {j} has out-of-range labels")));
        }
        stored_n.push(r.u32s(k)?);
        let m = r.u32s(k)?;
        let mb = r.u32s(2 * k)?.chunks(2).map(|c| [c[0], c[1]]).collect();
        docs.push(DocState { words, z, zb, n: Vec::new(), nb: Vec::new(), m, mb, pi, pib });
    }
    if r.pos != raw.len() {
        return Err(HdpError::Checkpoint("trailing bytes in counts file".into()));
    }
    let sub = meta
        .beta_bar
        .into_iter()
        .zip(meta.theta_bar)
        .zip(meta.age)
        .map(|((beta_bar, theta_bar), age)| SubCluster { beta_bar, theta_bar, words: [vec![], vec![]], age })
        .collect();
    let mut state = HdpState {
        hyper: meta.hyper,
        vocab_size: meta.vocab_size,
        beta: meta.beta,
        theta: meta.theta,
        topic_words: Vec::new(),
        sub,
        docs,
        iteration: meta.iteration,
    };
    if state.sub.len() != k || state.docs.iter().flat_map(|d| &d.words).any(|&w| w as usize >= state.vocab_size) {
        return Err(HdpError::Checkpoint("inconsistent topic or vocabulary sizes".into()));
    }
    state.recount();
    if state.docs.iter().zip(&stored_n).any(|(d, n)| &d.n != n) {
        return Err(HdpError::Checkpoint("stored counts do not match the labels".into()));
    }
    Ok(state)
}
