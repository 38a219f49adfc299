use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{expected_scores, match_scores, TransitionTables};
use crate::corpus::{Corpus, Speaker};
use crate::decode::{is_well_formed, DecodeConfig, DialogContext};
use crate::error::{Error, Result};
use crate::filter::{check, total_violations, CheckContext, DialogState, RuleSet};
use crate::model::{example_groups, perplexity, Checkpoint, Head, TrainingMode};
use crate::pipeline::{respond, ModelSet, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub variant: Variant,
    #[serde(default)]
    pub decode: DecodeConfig,
    pub rules: RuleSet,
    #[serde(default)]
    pub include_control_in_ppl: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub dialog: String,
    pub turn: usize,
    pub route: String,
    pub human_intent: String,
    pub human_slot: String,
    pub gold_intent: String,
    pub gold_slot: String,
    pub predicted_intent: String,
    pub predicted_slot: String,
    pub response: String,
    pub violations: usize,
    pub fallback: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TurnScores {
    pub rip: Vec<f64>,
    pub rsp: Vec<f64>,
    pub erip: Vec<f64>,
    pub ersp: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: Variant,
    pub task: String,
    /// Not applicable for hybrid.
    pub ppl: Option<f64>,
    pub rip: f64,
    pub rsp: f64,
    pub erip: f64,
    pub ersp: f64,
    pub turn_count: usize,
    /// Turns whose reply breaks an enabled rule.
    pub violation_rate: f64,
    pub fallback_rate: f64,
    /// Generated candidates that follow their variant's grammar.
    pub well_formed_rate: f64,
    pub per_turn: TurnScores,
    pub turns: Vec<TurnRecord>,
    pub config_digest: String,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("eval report", e))
    }
}

/// Per-turn decoding seed.
pub fn turn_seed(seed: u64, dialog: usize, turn: usize) -> u64 {
    seed ^ (((dialog as u64) << 20) | turn as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn digest(models: &ModelSet, cfg: &EvalConfig) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg).map_err(|e| Error::json("eval config", e))?);
    for mode in [TrainingMode::Missa, TrainingMode::MissaCon, TrainingMode::Vanilla] {
        if let Some(c) = models.get(mode) {
            h.update(c.digest());
        }
    }
    Ok(hex::encode(h.finalize()))
}

/// Generates a reply for every system turn of `test` from its gold context
/// and scores the primary intent and slot against the gold first sentence.
pub fn run_eval(models: &ModelSet, tables: &TransitionTables, test: &Corpus, cfg: &EvalConfig) -> Result<EvalReport> {
    if !models.supports(cfg.variant) {
        let missing: Vec<&str> = cfg
            .variant
            .required_modes()
            .iter()
            .filter(|m| models.get(**m).is_none())
            .map(|m| m.as_str())
            .collect();
        return Err(Error::ModelMismatch(format!(
            "variant {} needs checkpoints for {}",
            cfg.variant,
            missing.join(", ")
        )));
    }
    for mode in cfg.variant.required_modes() {
        let c = models.get(*mode).expect("checked above");
        if c.taxonomy.digest() != test.taxonomy.digest() {
            return Err(Error::ModelMismatch(format!(
                "{} checkpoint was trained on a different taxonomy",
                mode.as_str()
            )));
        }
    }
    cfg.decode.validate()?;
    let enabled = cfg.rules.enabled()?;
    tracing::debug!(variant = %cfg.variant, rules = ?enabled, "evaluating");

    let mut turns = Vec::new();
    let mut predicted = (Vec::new(), Vec::new());
    let mut gold = (Vec::new(), Vec::new());
    let mut human = (Vec::new(), Vec::new());
    let mut violating = 0usize;
    let mut fallbacks = 0usize;
    let (mut generated, mut well_formed) = (0usize, 0usize);
    for (d, dialog) in test.dialogs.iter().enumerate() {
        let mut state = DialogState::default();
        for (t, turn) in dialog.turns.iter().enumerate() {
            if turn.speaker == Speaker::System && !turn.sentences.is_empty() {
                let ctx = DialogContext::new(dialog.private_info.clone(), dialog.turns[..t].to_vec());
                let previous = t.checked_sub(1).map(|p| &dialog.turns[p]).filter(|p| p.speaker == Speaker::Human);
                let human_intents: Vec<String> = previous
                    .map(|p| p.sentences.iter().map(|s| s.intent.clone()).collect())
                    .unwrap_or_default();
                let decode = DecodeConfig {
                    seed: turn_seed(cfg.decode.seed, d, t),
                    ..cfg.decode.clone()
                };
                let trace = respond(models, cfg.variant, &ctx, &state, &human_intents, &decode, &cfg.rules)?;
                for c in &trace.candidates {
                    generated += 1;
                    well_formed += usize::from(is_well_formed(&c.tokens, trace.route));
                }
                let reply = trace.reply();
                let pool_ctx = CheckContext::of(&trace.candidates);
                let violations = total_violations(&check(reply, &state, &cfg.rules, &pool_ctx)?);
                violating += usize::from(violations > 0);
                let fallback = trace.filter.as_ref().is_some_and(|f| f.fallback);
                fallbacks += usize::from(fallback);

                let last_human = previous.and_then(|p| p.sentences.last());
                let record = TurnRecord {
                    dialog: dialog.id.clone(),
                    turn: t,
                    route: trace.route.mode().as_str().to_string(),
                    human_intent: last_human.map(|s| s.intent.clone()).unwrap_or_default(),
                    human_slot: last_human.map(|s| s.slot.clone()).unwrap_or_default(),
                    gold_intent: turn.sentences[0].intent.clone(),
                    gold_slot: turn.sentences[0].slot.clone(),
                    predicted_intent: reply.primary_intent().unwrap_or_default().to_string(),
                    predicted_slot: reply.primary_slot().unwrap_or_default().to_string(),
                    response: reply.text(),
                    violations,
                    fallback,
                };
                predicted.0.push(record.predicted_intent.clone());
                predicted.1.push(record.predicted_slot.clone());
                gold.0.push(record.gold_intent.clone());
                gold.1.push(record.gold_slot.clone());
                human.0.push(record.human_intent.clone());
                human.1.push(record.human_slot.clone());
                turns.push(record);
            }
            state.update_turn(turn);
        }
    }
    if turns.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let per_turn = TurnScores {
        rip: match_scores(&predicted.0, &gold.0)?,
        rsp: match_scores(&predicted.1, &gold.1)?,
        erip: expected_scores(&predicted.0, &gold.0, &tables.intent, &human.0)?,
        ersp: expected_scores(&predicted.1, &gold.1, &tables.slot, &human.1)?,
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ppl_model: Option<&Checkpoint> = match cfg.variant {
        Variant::Missa | Variant::MissaSel => models.missa.as_deref(),
        Variant::MissaCon => models.missa_con.as_deref(),
        Variant::Vanilla => models.vanilla.as_deref(),
        Variant::Hybrid => None,
    };
    let ppl = ppl_model
        .map(|m| perplexity(m, test, cfg.include_control_in_ppl))
        .transpose()?;
    let n = turns.len() as f64;
    Ok(EvalReport {
        variant: cfg.variant,
        task: test.taxonomy.task.clone(),
        ppl,
        rip: mean(&per_turn.rip),
        rsp: mean(&per_turn.rsp),
        erip: mean(&per_turn.erip),
        ersp: mean(&per_turn.ersp),
        turn_count: turns.len(),
        violation_rate: violating as f64 / n,
        fallback_rate: fallbacks as f64 / n,
        well_formed_rate: if generated == 0 { 1.0 } else { well_formed as f64 / generated as f64 },
        per_turn,
        turns,
        config_digest: digest(models, cfg)?,
    })
}

/// Argmax accuracy of one classifier head over the gold sentences of
/// `corpus`, with teacher-forced context.
pub fn head_accuracy(ckpt: &Checkpoint, corpus: &Corpus, head: Head) -> Result<f64> {
    let groups = example_groups(ckpt, corpus, 0)?;
    let mut correct = 0usize;
    let mut total = 0usize;
    for g in &groups {
        let t = &g.positive.targets;
        let targets = match head {
            Head::HumanIntent => &t.human_intent,
            Head::HumanSlot => &t.human_slot,
            Head::SystemIntent => &t.system_intent,
            Head::SystemSlot => &t.system_slot,
        };
        if targets.is_empty() {
            continue;
        }
        let hidden = ckpt.model.hidden_states(&g.positive.seq)?;
        for target in targets {
            let row = ckpt
                .model
                .classifier_row(head, hidden.row(target.anchor), hidden.row(target.position));
            let best = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                .0;
            correct += usize::from(best == target.label);
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Empty("classifier targets"));
    }
    Ok(correct as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Text,
    Csv,
}

/// One row per report with PPL, RIP, RSP, ERIP and ERSP; PPL is `-` when
/// not applicable. Text shows percentages, CSV raw fractions.
pub fn format_table(reports: &[EvalReport], format: TableFormat) -> String {
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            out.push_str("model,ppl,rip,rsp,erip,ersp\n");
            for r in reports {
                let ppl = r.ppl.map(|p| format!("{p:.4}")).unwrap_or_else(|| "-".into());
                out.push_str(&format!(
                    "{},{},{:.4},{:.4},{:.4},{:.4}\n",
                    r.variant, ppl, r.rip, r.rsp, r.erip, r.ersp
                ));
            }
        }
        TableFormat::Text => {
            out.push_str(&format!(
                "{:<10} {:>8} {:>7} {:>7} {:>7} {:>7}\n",
                "Model", "PPL", "RIP", "RSP", "ERIP", "ERSP"
            ));
            for r in reports {
                let ppl = r.ppl.map(|p| format!("{p:.2}")).unwrap_or_else(|| "-".into());
                let pct = |v: f64| format!("{:.1}%", 100.0 * v);
                out.push_str(&format!(
                    "{:<10} {:>8} {:>7} {:>7} {:>7} {:>7}\n",
                    r.variant.as_str(),
                    ppl,
                    pct(r.rip),
                    pct(r.rsp),
                    pct(r.erip),
                    pct(r.ersp)
                ));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(variant: Variant, ppl: Option<f64>) -> EvalReport {
        EvalReport {
            variant,
            task: "antiscam".into(),
            ppl,
            rip: 0.351,
            rsp: 0.466,
            erip: 0.472,
            ersp: 0.586,
            turn_count: 1,
            violation_rate: 0.0,
            fallback_rate: 0.0,
            well_formed_rate: 1.0,
            per_turn: TurnScores::default(),
            turns: Vec::new(),
            config_digest: String::new(),
        }
    }

    #[test]
    fn table_rows_per_variant() {
        let reports: Vec<_> = Variant::ALL
            .iter()
            .map(|&v| report(v, (v != Variant::Hybrid).then_some(21.07)))
            .collect();
        let text = format_table(&reports, TableFormat::Text);
        assert_eq!(text.lines().count(), 6);
        assert!(text.lines().nth(1).unwrap().contains("35.1%"));
        assert!(text.lines().last().unwrap().starts_with("hybrid"));
        assert!(text.lines().last().unwrap().contains(" - "));
        let csv = format_table(&reports, TableFormat::Csv);
        assert_eq!(csv.lines().nth(5).unwrap(), "hybrid,-,0.3510,0.4660,0.4720,0.5860");
    }

    #[test]
    fn turn_seeds_differ() {
        assert_ne!(turn_seed(1, 0, 1), turn_seed(1, 1, 1));
        assert_ne!(turn_seed(1, 0, 1), turn_seed(1, 0, 3));
        assert_eq!(turn_seed(5, 2, 3), turn_seed(5, 2, 3));
    }
}
