use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::encode::{TokenSequence, STATE_COUNT};
use crate::error::{Error, Result};
use crate::nnet::kernels::{gelu, gemm, layer_norm_row, softmax_in_place};
use crate::nnet::{Graph, NodeId, ParamId, ParamStore, Tensor};

const INIT_STD: f64 = 0.02;

/// Output sizes fixed by the vocabulary and taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab: usize,
    pub intents: usize,
    pub slots: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    HumanIntent,
    HumanSlot,
    SystemIntent,
    SystemSlot,
}

impl Head {
    pub const ALL: [Head; 4] = [Head::HumanIntent, Head::HumanSlot, Head::SystemIntent, Head::SystemSlot];

    pub fn name(self) -> &'static str {
        match self {
            Head::HumanIntent => "human_intent",
            Head::HumanSlot => "human_slot",
            Head::SystemIntent => "system_intent",
            Head::SystemSlot => "system_slot",
        }
    }

    fn is_intent(self) -> bool {
        matches!(self, Head::HumanIntent | Head::SystemIntent)
    }
}

#[derive(Debug, Clone)]
struct BlockIds {
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    w_qkv: ParamId,
    b_qkv: ParamId,
    w_o: ParamId,
    b_o: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
    w_fc: ParamId,
    b_fc: ParamId,
    w_proj: ParamId,
    b_proj: ParamId,
}

#[derive(Debug, Clone)]
struct ParamIds {
    token: ParamId,
    position: ParamId,
    state: ParamId,
    blocks: Vec<BlockIds>,
    lnf_gain: ParamId,
    lnf_bias: ParamId,
    lm: ParamId,
    heads: [ParamId; 4],
    nup_weight: ParamId,
    nup_bias: ParamId,
}

/// Decoder-only transformer with language-modeling, classifier and
/// next-utterance heads.
#[derive(Debug, Clone)]
pub struct MissaModel {
    pub config: ModelConfig,
    pub dims: ModelDims,
    pub store: ParamStore,
    ids: ParamIds,
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("positive std");
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape")
}

impl MissaModel {
    pub fn new(config: ModelConfig, dims: ModelDims, seed: u64) -> Result<Self> {
        config.validate()?;
        if dims.vocab == 0 || dims.intents == 0 || dims.slots == 0 {
            return Err(Error::Config("vocabulary and label sets must be non-empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden;
        let proj_std = INIT_STD / ((2 * config.layers) as f64).sqrt();
        let mut store = ParamStore::new();
        let token = store.add("embed.token", normal(&mut rng, &[dims.vocab, h], INIT_STD));
        let position = store.add("embed.position", normal(&mut rng, &[config.context, h], INIT_STD));
        let state = store.add("embed.state", normal(&mut rng, &[STATE_COUNT, h], INIT_STD));
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = |s: &str| format!("block{l}.{s}");
            blocks.push(BlockIds {
                ln1_gain: store.add(p("ln1.gain"), Tensor::full(&[h], 1.0)),
                ln1_bias: store.add(p("ln1.bias"), Tensor::zeros(&[h])),
                w_qkv: store.add(p("attn.w_qkv"), normal(&mut rng, &[h, 3 * h], INIT_STD)),
                b_qkv: store.add(p("attn.b_qkv"), Tensor::zeros(&[3 * h])),
                w_o: store.add(p("attn.w_o"), normal(&mut rng, &[h, h], proj_std)),
                b_o: store.add(p("attn.b_o"), Tensor::zeros(&[h])),
                ln2_gain: store.add(p("ln2.gain"), Tensor::full(&[h], 1.0)),
                ln2_bias: store.add(p("ln2.bias"), Tensor::zeros(&[h])),
                w_fc: store.add(p("mlp.w_fc"), normal(&mut rng, &[h, config.ffn], INIT_STD)),
                b_fc: store.add(p("mlp.b_fc"), Tensor::zeros(&[config.ffn])),
                w_proj: store.add(p("mlp.w_proj"), normal(&mut rng, &[config.ffn, h], proj_std)),
                b_proj: store.add(p("mlp.b_proj"), Tensor::zeros(&[h])),
            });
        }
        let lnf_gain = store.add("final_ln.gain", Tensor::full(&[h], 1.0));
        let lnf_bias = store.add("final_ln.bias", Tensor::zeros(&[h]));
        let lm = store.add("lm_head", normal(&mut rng, &[h, dims.vocab], INIT_STD));
        let heads = Head::ALL.map(|head| {
            let width = if head.is_intent() { dims.intents } else { dims.slots };
            store.add(format!("head.{}", head.name()), normal(&mut rng, &[2 * h, width], INIT_STD))
        });
        let nup_weight = store.add("next_utterance.weight", normal(&mut rng, &[h, 1], INIT_STD));
        let nup_bias = store.add("next_utterance.bias", Tensor::zeros(&[1]));
        Ok(Self {
            config,
            dims,
            store,
            ids: ParamIds {
                token,
                position,
                state,
                blocks,
                lnf_gain,
                lnf_bias,
                lm,
                heads,
                nup_weight,
                nup_bias,
            },
        })
    }

    pub fn head_param(&self, head: Head) -> ParamId {
        self.ids.heads[head as usize]
    }

    pub fn parameter_count(&self) -> usize {
        self.store.element_count()
    }

    fn check_sequence(&self, seq: &TokenSequence) -> Result<()> {
        let n = seq.tokens.len();
        if n == 0 {
            return Err(Error::Empty("token sequence"));
        }
        if seq.positions.len() != n || seq.states.len() != n {
            return Err(Error::shape("forward", "token, position and state ids differ in length"));
        }
        if n > self.config.context {
            return Err(Error::ContextOverflow {
                needed: n,
                context: self.config.context,
            });
        }
        if let Some(&t) = seq.tokens.iter().find(|&&t| t as usize >= self.dims.vocab) {
            return Err(Error::ModelMismatch(format!(
                "token id {t} outside a vocabulary of {}",
                self.dims.vocab
            )));
        }
        Ok(())
    }

    /// Final-layer hidden states `[T, H]`. Dropout is applied when `dropout`
    /// carries a random source and the configured rate is positive.
    pub fn hidden(&self, g: &mut Graph<'_>, seq: &TokenSequence, mut dropout: Option<&mut ChaCha8Rng>) -> Result<NodeId> {
        self.check_sequence(seq)?;
        let t = seq.tokens.len();
        let h = self.config.hidden;
        let d = self.config.head_dim();
        let rate = self.config.dropout;
        let mut drop = |g: &mut Graph<'_>, x: NodeId| -> Result<NodeId> {
            match dropout.as_deref_mut() {
                Some(rng) if rate > 0.0 => {
                    let keep = 1.0 / (1.0 - rate);
                    let mask: Vec<f64> = (0..t * h)
                        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                        .collect();
                    let mask = g.input(Tensor::matrix(t, h, mask)?);
                    g.mul(x, mask)
                }
                _ => Ok(x),
            }
        };

        let tokens: Vec<usize> = seq.tokens.iter().map(|&t| t as usize).collect();
        let states: Vec<usize> = seq.states.iter().map(|&s| s as usize).collect();
        let tok_table = g.param(self.ids.token);
        let pos_table = g.param(self.ids.position);
        let state_table = g.param(self.ids.state);
        let tok = g.gather(tok_table, &tokens)?;
        let pos = g.gather(pos_table, &seq.positions)?;
        let st = g.gather(state_table, &states)?;
        let x = g.add(tok, pos)?;
        let x = g.add(x, st)?;
        let mut x = drop(g, x)?;

        let scale = 1.0 / (d as f64).sqrt();
        for block in &self.ids.blocks {
            let gain = g.param(block.ln1_gain);
            let bias = g.param(block.ln1_bias);
            let normed = g.layer_norm(x, gain, bias)?;
            let w_qkv = g.param(block.w_qkv);
            let b_qkv = g.param(block.b_qkv);
            let qkv = g.matmul(normed, w_qkv)?;
            let qkv = g.add_row(qkv, b_qkv)?;
            let mut heads = Vec::with_capacity(self.config.heads);
            for i in 0..self.config.heads {
                let q = g.slice_cols(qkv, i * d, d)?;
                let k = g.slice_cols(qkv, h + i * d, d)?;
                let v = g.slice_cols(qkv, 2 * h + i * d, d)?;
                let scores = g.matmul_t(q, k)?;
                let scores = g.scale(scores, scale);
                let attn = g.causal_softmax(scores)?;
                heads.push(g.matmul(attn, v)?);
            }
            let merged = g.concat_cols(&heads)?;
            let w_o = g.param(block.w_o);
            let b_o = g.param(block.b_o);
            let out = g.matmul(merged, w_o)?;
            let out = g.add_row(out, b_o)?;
            let out = drop(g, out)?;
            x = g.add(x, out)?;

            let gain = g.param(block.ln2_gain);
            let bias = g.param(block.ln2_bias);
            let normed = g.layer_norm(x, gain, bias)?;
            let w_fc = g.param(block.w_fc);
            let b_fc = g.param(block.b_fc);
            let w_proj = g.param(block.w_proj);
            let b_proj = g.param(block.b_proj);
            let f = g.matmul(normed, w_fc)?;
            let f = g.add_row(f, b_fc)?;
            let f = g.gelu(f);
            let f = g.matmul(f, w_proj)?;
            let f = g.add_row(f, b_proj)?;
            let f = drop(g, f)?;
            x = g.add(x, f)?;
        }
        let gain = g.param(self.ids.lnf_gain);
        let bias = g.param(self.ids.lnf_bias);
        g.layer_norm(x, gain, bias)
    }

    /// Vocabulary logits `[rows.len(), V]` at the given positions.
    pub fn lm_logits(&self, g: &mut Graph<'_>, hidden: NodeId, rows: &[usize]) -> Result<NodeId> {
        let picked = g.gather(hidden, rows)?;
        let w = g.param(self.ids.lm);
        g.matmul(picked, w)
    }

    /// Label logits from `[h_anchor ; h_position]` per pair.
    pub fn classifier_logits(&self, g: &mut Graph<'_>, hidden: NodeId, head: Head, anchors: &[usize], positions: &[usize]) -> Result<NodeId> {
        let a = g.gather(hidden, anchors)?;
        let p = g.gather(hidden, positions)?;
        let input = g.concat_cols(&[a, p])?;
        let w = g.param(self.head_param(head));
        g.matmul(input, w)
    }

    /// Next-utterance score `[1, 1]` at `position`.
    pub fn next_utterance_logit(&self, g: &mut Graph<'_>, hidden: NodeId, position: usize) -> Result<NodeId> {
        let picked = g.gather(hidden, &[position])?;
        let w = g.param(self.ids.nup_weight);
        let b = g.param(self.ids.nup_bias);
        let s = g.matmul(picked, w)?;
        g.add_row(s, b)
    }

    /// Hidden states of a whole sequence without dropout.
    pub fn hidden_states(&self, seq: &TokenSequence) -> Result<Tensor> {
        let mut g = Graph::new(&self.store);
        let h = self.hidden(&mut g, seq, None)?;
        Ok(g.value(h).clone())
    }

    fn vec_mat(&self, x: &[f64], w: ParamId, bias: Option<ParamId>) -> Vec<f64> {
        let w = self.store.value(w);
        let (k, n) = (w.rows(), w.cols());
        let mut out = match bias {
            Some(b) => self.store.value(b).data().to_vec(),
            None => vec![0.0; n],
        };
        gemm(1, k, n, x, false, w.data(), false, 1.0, &mut out);
        out
    }

    /// Vocabulary logits for one hidden row.
    pub fn lm_row(&self, hidden: &[f64]) -> Vec<f64> {
        self.vec_mat(hidden, self.ids.lm, None)
    }

    pub fn classifier_row(&self, head: Head, anchor: &[f64], hidden: &[f64]) -> Vec<f64> {
        let mut input = Vec::with_capacity(anchor.len() + hidden.len());
        input.extend_from_slice(anchor);
        input.extend_from_slice(hidden);
        self.vec_mat(&input, self.head_param(head), None)
    }

    pub fn next_utterance_row(&self, hidden: &[f64]) -> f64 {
        self.vec_mat(hidden, self.ids.nup_weight, Some(self.ids.nup_bias))[0]
    }

    pub fn incremental(&self) -> IncrementalDecoder<'_> {
        IncrementalDecoder {
            model: self,
            keys: vec![Vec::new(); self.config.layers],
            values: vec![Vec::new(); self.config.layers],
            len: 0,
            last: Vec::new(),
        }
    }
}

/// Token-at-a-time inference with cached keys and values. Cloning forks the
/// cache so several continuations can share one prefix.
#[derive(Debug, Clone)]
pub struct IncrementalDecoder<'m> {
    model: &'m MissaModel,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    len: usize,
    last: Vec<f64>,
}

impl<'m> IncrementalDecoder<'m> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Final-layer hidden state of the most recent token.
    pub fn last_hidden(&self) -> &[f64] {
        &self.last
    }

    /// Appends one token and returns its final-layer hidden state.
    pub fn push(&mut self, token: u32, state: u8) -> Result<&[f64]> {
        let m = self.model;
        let cfg = &m.config;
        if self.len >= cfg.context {
            return Err(Error::ContextOverflow {
                needed: self.len + 1,
                context: cfg.context,
            });
        }
        if token as usize >= m.dims.vocab || state as usize >= STATE_COUNT {
            return Err(Error::ModelMismatch(format!("token {token} or state {state} out of range")));
        }
        let h = cfg.hidden;
        let d = cfg.head_dim();
        let pos = self.len;
        let row = |id: ParamId, r: usize| &m.store.value(id).data()[r * h..(r + 1) * h];
        let mut x: Vec<f64> = row(m.ids.token, token as usize)
            .iter()
            .zip(row(m.ids.position, pos))
            .zip(row(m.ids.state, state as usize))
            .map(|((a, b), c)| a + b + c)
            .collect();
        let mut normed = vec![0.0; h];
        let scale = 1.0 / (d as f64).sqrt();
        let n = pos + 1;
        for (l, block) in m.ids.blocks.iter().enumerate() {
            layer_norm_row(
                &x,
                m.store.value(block.ln1_gain).data(),
                m.store.value(block.ln1_bias).data(),
                &mut normed,
            );
            let qkv = m.vec_mat(&normed, block.w_qkv, Some(block.b_qkv));
            self.keys[l].extend_from_slice(&qkv[h..2 * h]);
            self.values[l].extend_from_slice(&qkv[2 * h..]);
            let keys = &self.keys[l];
            let values = &self.values[l];
            let mut merged = vec![0.0; h];
            let mut scores = vec![0.0; n];
            for head in 0..cfg.heads {
                let q = &qkv[head * d..(head + 1) * d];
                for (j, s) in scores.iter_mut().enumerate() {
                    let k = &keys[j * h + head * d..j * h + (head + 1) * d];
                    *s = q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                softmax_in_place(&mut scores);
                let out = &mut merged[head * d..(head + 1) * d];
                for (j, &p) in scores.iter().enumerate() {
                    let v = &values[j * h + head * d..j * h + (head + 1) * d];
                    for (o, vv) in out.iter_mut().zip(v) {
                        *o += p * vv;
                    }
                }
            }
            let attn = m.vec_mat(&merged, block.w_o, Some(block.b_o));
            for (a, b) in x.iter_mut().zip(&attn) {
                *a += b;
            }
            layer_norm_row(
                &x,
                m.store.value(block.ln2_gain).data(),
                m.store.value(block.ln2_bias).data(),
                &mut normed,
            );
            let mut f = m.vec_mat(&normed, block.w_fc, Some(block.b_fc));
            f.iter_mut().for_each(|v| *v = gelu(*v));
            let f = m.vec_mat(&f, block.w_proj, Some(block.b_proj));
            for (a, b) in x.iter_mut().zip(&f) {
                *a += b;
            }
        }
        let mut out = vec![0.0; h];
        layer_norm_row(
            &x,
            m.store.value(m.ids.lnf_gain).data(),
            m.store.value(m.ids.lnf_bias).data(),
            &mut out,
        );
        self.len += 1;
        self.last = out;
        Ok(&self.last)
    }

    /// Pushes every token of `seq` and returns all hidden rows.
    pub fn push_sequence(&mut self, tokens: &[u32], states: &[u8]) -> Result<Vec<Vec<f64>>> {
        tokens
            .iter()
            .zip(states)
            .map(|(&t, &s)| self.push(t, s).map(|h| h.to_vec()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::encode::{SentenceEnd, STATE_HUMAN, STATE_SYSTEM};

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            layers: 2,
            heads: 2,
            hidden: 16,
            ffn: 32,
            context: 64,
            dropout: 0.0,
            ..Default::default()
        }
    }

    fn seq(tokens: Vec<u32>) -> TokenSequence {
        let n = tokens.len();
        TokenSequence {
            positions: (0..n).collect(),
            states: (0..n).map(|i| if i < 3 { 0 } else if i < 7 { STATE_HUMAN } else { STATE_SYSTEM }).collect(),
            tokens,
            sentence_ends: Vec::<SentenceEnd>::new(),
            candidate: None,
            dropped_turns: 0,
        }
    }

    #[test]
    fn head_shapes_follow_the_concatenated_input() {
        let dims = ModelDims { vocab: 40, intents: 15, slots: 13 };
        let cfg = ModelConfig { context: 64, ..Default::default() };
        let model = MissaModel::new(cfg, dims, 0).unwrap();
        assert_eq!(model.store.value(model.head_param(Head::HumanIntent)).shape(), &[256, 15]);
        assert_eq!(model.store.value(model.head_param(Head::SystemSlot)).shape(), &[256, 13]);
        let s = seq(vec![2, 7, 8, 4, 5, 9, 10, 4]);
        let mut g = Graph::new(&model.store);
        let h = model.hidden(&mut g, &s, None).unwrap();
        let logits = model.classifier_logits(&mut g, h, Head::HumanIntent, &[0, 3], &[3, 7]).unwrap();
        assert_eq!(g.value(logits).shape(), &[2, 15]);
        let lm = model.lm_logits(&mut g, h, &[1, 2, 3]).unwrap();
        assert_eq!(g.value(lm).shape(), &[3, 40]);
    }

    #[test]
    fn zero_classifier_weights_give_uniform_posterior() {
        let dims = ModelDims { vocab: 20, intents: 5, slots: 4 };
        let mut model = MissaModel::new(tiny_config(), dims, 1).unwrap();
        let id = model.head_param(Head::SystemIntent);
        model.store.get_mut(id).value.fill(0.0);
        let hidden = model.hidden_states(&seq(vec![2, 3, 4, 5, 6])).unwrap();
        let mut row = model.classifier_row(Head::SystemIntent, hidden.row(0), hidden.row(4));
        softmax_in_place(&mut row);
        assert!(row.iter().all(|p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn incremental_matches_full_forward() {
        let dims = ModelDims { vocab: 30, intents: 5, slots: 4 };
        let model = MissaModel::new(tiny_config(), dims, 2).unwrap();
        let s = seq(vec![2, 11, 12, 4, 5, 13, 14, 4, 6, 20, 21, 4, 3]);
        let full = model.hidden_states(&s).unwrap();
        let mut inc = model.incremental();
        let rows = inc.push_sequence(&s.tokens, &s.states).unwrap();
        for (i, r) in rows.iter().enumerate() {
            for (a, b) in r.iter().zip(full.row(i)) {
                assert!((a - b).abs() < 1e-10, "row {i}: {a} vs {b}");
            }
        }
        let mut g = Graph::new(&model.store);
        let h = g.input(full.clone());
        let lm = model.lm_logits(&mut g, h, &[12]).unwrap();
        let row = model.lm_row(&rows[12]);
        for (a, b) in row.iter().zip(g.value(lm).data()) {
            assert!((a - b).abs() < 1e-10);
        }
        let nup = model.next_utterance_logit(&mut g, h, 12).unwrap();
        assert!((g.value(nup).item() - model.next_utterance_row(&rows[12])).abs() < 1e-12);
    }

    #[test]
    fn forked_decoders_are_independent() {
        let dims = ModelDims { vocab: 30, intents: 5, slots: 4 };
        let model = MissaModel::new(tiny_config(), dims, 2).unwrap();
        let mut base = model.incremental();
        base.push_sequence(&[2, 11, 4], &[0, 0, 0]).unwrap();
        let mut a = base.clone();
        let mut b = base.clone();
        let ha = a.push(5, 1).unwrap().to_vec();
        b.push(6, 1).unwrap();
        let hb = b.push(7, 1).unwrap().to_vec();
        let mut again = base.clone();
        assert_eq!(again.push(5, 1).unwrap(), ha.as_slice());
        assert_ne!(ha, hb);
        assert_eq!(base.len(), 3);
    }

    #[test]
    fn seeds_fix_initialization() {
        let dims = ModelDims { vocab: 30, intents: 5, slots: 4 };
        let a = MissaModel::new(tiny_config(), dims, 9).unwrap();
        let b = MissaModel::new(tiny_config(), dims, 9).unwrap();
        let c = MissaModel::new(tiny_config(), dims, 10).unwrap();
        assert_eq!(a.store, b.store);
        assert_ne!(a.store, c.store);
    }

    #[test]
    fn rejects_out_of_range_tokens() {
        let dims = ModelDims { vocab: 10, intents: 5, slots: 4 };
        let model = MissaModel::new(tiny_config(), dims, 0).unwrap();
        assert!(matches!(model.hidden_states(&seq(vec![2, 99])), Err(Error::ModelMismatch(_))));
    }
}
