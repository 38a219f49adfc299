use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encode::{ClassTarget, EncodedExample, ExampleGroup};
use super::network::{Head, MissaModel};
use crate::error::{Error, Result};
use crate::nnet::{Graph, NodeId, Reduction, Tensor};

pub const COMPONENTS: [&str; 6] = [
    "lm",
    "human_intent",
    "human_slot",
    "system_intent",
    "system_slot",
    "next_utterance",
];

/// Mean per-component losses and their weighted total.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub lm: f64,
    pub human_intent: f64,
    pub human_slot: f64,
    pub system_intent: f64,
    pub system_slot: f64,
    pub next_utterance: f64,
    pub total: f64,
    /// Components with no supervised position in the batch; they are 0.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unsupervised: Vec<String>,
}

impl LossBreakdown {
    pub fn components(&self) -> [f64; 6] {
        [
            self.lm,
            self.human_intent,
            self.human_slot,
            self.system_intent,
            self.system_slot,
            self.next_utterance,
        ]
    }

    fn from_components(values: [f64; 6], weights: [f64; 6], counts: [usize; 6]) -> Self {
        let total = values.iter().zip(weights).map(|(v, w)| v * w).sum();
        let unsupervised = COMPONENTS
            .iter()
            .zip(counts)
            .filter(|(_, c)| *c == 0)
            .map(|(n, _)| n.to_string())
            .collect();
        Self {
            lm: values[0],
            human_intent: values[1],
            human_slot: values[2],
            system_intent: values[3],
            system_slot: values[4],
            next_utterance: values[5],
            total,
            unsupervised,
        }
    }

    /// Element-wise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut out = LossBreakdown::default();
        for b in items {
            out.lm += b.lm / n;
            out.human_intent += b.human_intent / n;
            out.human_slot += b.human_slot / n;
            out.system_intent += b.system_intent / n;
            out.system_slot += b.system_slot / n;
            out.next_utterance += b.next_utterance / n;
            out.total += b.total / n;
        }
        out
    }
}

/// Number of supervised positions per component across a batch.
fn supervision_counts(batch: &[ExampleGroup]) -> [usize; 6] {
    let mut c = [0; 6];
    for g in batch {
        let t = &g.positive.targets;
        c[0] += t.lm.len();
        c[1] += t.human_intent.len();
        c[2] += t.human_slot.len();
        c[3] += t.system_intent.len();
        c[4] += t.system_slot.len();
        c[5] += usize::from(!g.distractors.is_empty());
    }
    c
}

struct GroupObjective {
    total: NodeId,
    sums: [f64; 6],
}

fn class_loss(model: &MissaModel, g: &mut Graph<'_>, hidden: NodeId, head: Head, targets: &[ClassTarget]) -> Result<Option<NodeId>> {
    if targets.is_empty() {
        return Ok(None);
    }
    let anchors: Vec<usize> = targets.iter().map(|t| t.anchor).collect();
    let positions: Vec<usize> = targets.iter().map(|t| t.position).collect();
    let labels: Vec<usize> = targets.iter().map(|t| t.label).collect();
    let logits = model.classifier_logits(g, hidden, head, &anchors, &positions)?;
    Ok(Some(g.cross_entropy(logits, &labels, Reduction::Sum)?))
}

fn group_objective(
    model: &MissaModel,
    g: &mut Graph<'_>,
    group: &ExampleGroup,
    counts: [usize; 6],
    mut dropout: Option<&mut ChaCha8Rng>,
) -> Result<GroupObjective> {
    let weights = model.config.loss_weights.as_array();
    let mut parts: [Option<NodeId>; 6] = [None; 6];
    let positive: &EncodedExample = &group.positive;
    let hidden = model.hidden(g, &positive.seq, dropout.as_deref_mut())?;
    let t = &positive.targets;
    if !t.lm.is_empty() {
        let rows: Vec<usize> = t.lm.iter().map(|(p, _)| *p).collect();
        let next: Vec<usize> = t.lm.iter().map(|(_, id)| *id as usize).collect();
        let logits = model.lm_logits(g, hidden, &rows)?;
        parts[0] = Some(g.cross_entropy(logits, &next, Reduction::Sum)?);
    }
    parts[1] = class_loss(model, g, hidden, Head::HumanIntent, &t.human_intent)?;
    parts[2] = class_loss(model, g, hidden, Head::HumanSlot, &t.human_slot)?;
    parts[3] = class_loss(model, g, hidden, Head::SystemIntent, &t.system_intent)?;
    parts[4] = class_loss(model, g, hidden, Head::SystemSlot, &t.system_slot)?;
    if !group.distractors.is_empty() {
        let end = |e: &EncodedExample| {
            e.seq
                .candidate
                .map(|c| c.end)
                .ok_or(Error::shape("next utterance", "example without a candidate"))
        };
        let mut scores = vec![model.next_utterance_logit(g, hidden, end(positive)?)?];
        for d in &group.distractors {
            let dh = model.hidden(g, &d.seq, dropout.as_deref_mut())?;
            scores.push(model.next_utterance_logit(g, dh, end(d)?)?);
        }
        let row = g.concat_cols(&scores)?;
        parts[5] = Some(g.cross_entropy(row, &[0], Reduction::Sum)?);
    }

    let mut sums = [0.0; 6];
    let mut total: Option<NodeId> = None;
    for (i, part) in parts.iter().enumerate() {
        let Some(node) = *part else { continue };
        sums[i] = g.value(node).item();
        if weights[i] == 0.0 {
            continue;
        }
        let scaled = g.scale(node, weights[i] / counts[i] as f64);
        total = Some(match total {
            Some(acc) => g.add(acc, scaled)?,
            None => scaled,
        });
    }
    let total = match total {
        Some(t) => t,
        None => g.input(Tensor::scalar(0.0)),
    };
    Ok(GroupObjective { total, sums })
}

fn finish(sums: [f64; 6], counts: [usize; 6], weights: [f64; 6]) -> LossBreakdown {
    let mut values = [0.0; 6];
    for i in 0..6 {
        if counts[i] > 0 {
            values[i] = sums[i] / counts[i] as f64;
        }
    }
    LossBreakdown::from_components(values, weights, counts)
}

/// Weighted multi-task loss over a batch, without dropout.
pub fn composite_loss(model: &MissaModel, batch: &[ExampleGroup]) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let counts = supervision_counts(batch);
    let mut sums = [0.0; 6];
    for group in batch {
        let mut g = Graph::new(&model.store);
        let obj = group_objective(model, &mut g, group, counts, None)?;
        for i in 0..6 {
            sums[i] += obj.sums[i];
        }
    }
    Ok(finish(sums, counts, model.config.loss_weights.as_array()))
}

/// Computes the batch loss and leaves its gradient in the parameter store.
/// Groups are processed in order, so accumulation is deterministic.
pub fn loss_and_gradients(model: &mut MissaModel, batch: &[ExampleGroup], mut dropout: Option<&mut ChaCha8Rng>) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let counts = supervision_counts(batch);
    let mut sums = [0.0; 6];
    model.store.zero_grad();
    for group in batch {
        let grads = {
            let mut g = Graph::new(&model.store);
            let obj = group_objective(model, &mut g, group, counts, dropout.as_deref_mut())?;
            for i in 0..6 {
                sums[i] += obj.sums[i];
            }
            g.backward(obj.total)?
        };
        model.store.accumulate(&grads);
    }
    Ok(finish(sums, counts, model.config.loss_weights.as_array()))
}
