//! Span masking: hard (collapsed sentinels) and soft (per-token blend weights).
//!
//! Both modes share one span stream. For every draw the generator yields the
//! span start (uniform over positions) and then the span length (geometric
//! with the configured mean, one uniform draw via the inverse CDF). Positions
//! are added in span order until the budget is reached, so the budget is
//! always met exactly.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::text::{TokenSeq, MASK_TOKEN};
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    Hard,
    Soft,
}

/// Masking budget and span shape.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskSpec {
    /// Fraction of tokens to mask.
    pub ratio: f64,
    /// Expected span length in tokens.
    pub span_mean: f64,
    pub mode: MaskMode,
    /// Soft-mask coefficient: weight of the mask representation.
    pub blend: f64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        MaskSpec {
            ratio: 0.4,
            span_mean: 3.0,
            mode: MaskMode::Hard,
            blend: 0.5,
        }
    }
}

impl MaskSpec {
    pub fn hard(ratio: f64) -> Self {
        MaskSpec {
            ratio,
            ..Default::default()
        }
    }

    pub fn soft(ratio: f64, blend: f64) -> Self {
        MaskSpec {
            ratio,
            mode: MaskMode::Soft,
            blend,
            ..Default::default()
        }
    }

    pub fn with_mode(self, mode: MaskMode) -> Self {
        MaskSpec { mode, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(Error::InvalidMaskSpec(format!("ratio {} not in [0,1]", self.ratio)));
        }
        if !(self.span_mean >= 1.0 && self.span_mean.is_finite()) {
            return Err(Error::InvalidMaskSpec(format!(
                "span_mean {} must be >= 1",
                self.span_mean
            )));
        }
        if !(0.0..=1.0).contains(&self.blend) {
            return Err(Error::InvalidMaskSpec(format!("blend {} not in [0,1]", self.blend)));
        }
        Ok(())
    }
}

/// Number of positions masked in a sequence of length `len`.
pub fn mask_budget(len: usize, ratio: f64) -> usize {
    if len == 0 || ratio <= 0.0 {
        return 0;
    }
    // the epsilon absorbs products like 0.7 * 10 landing just above an integer
    let raw = (ratio * len as f64 - 1e-9).ceil().max(1.0) as usize;
    raw.min(len)
}

fn span_length(rng: &mut StreamRng, span_mean: f64) -> usize {
    let u = rng::unit(rng);
    let p = 1.0 / span_mean;
    if p >= 1.0 {
        return 1;
    }
    let extra = ((1.0 - u).ln() / (1.0 - p).ln()).floor();
    1 + extra.min(u32::MAX as f64) as usize
}

fn select_positions(len: usize, spec: &MaskSpec, seed: u64) -> Vec<bool> {
    let budget = mask_budget(len, spec.ratio);
    let mut masked = vec![false; len];
    let mut count = 0;
    let mut rng = rng::stream(seed);
    while count < budget {
        let start = rng.gen_range(0..len);
        let span = span_length(&mut rng, spec.span_mean);
        for flag in masked.iter_mut().skip(start).take(span) {
            if count == budget {
                break;
            }
            if !*flag {
                *flag = true;
                count += 1;
            }
        }
    }
    masked
}

/// One noised view of a source sentence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskedVariant {
    pub kind: MaskMode,
    pub source: TokenSeq,
    /// HARD only: each maximal masked run collapsed to one `<mask>`.
    pub hard_tokens: Option<TokenSeq>,
    /// SOFT only: per-token blend weight, zero where unmasked.
    pub weights: Option<Vec<f64>>,
    /// Sorted masked source indices.
    pub masked_positions: Vec<usize>,
}

impl MaskedVariant {
    fn from_flags(source: &TokenSeq, flags: &[bool], kind: MaskMode, blend: f64) -> Self {
        let masked_positions: Vec<usize> = (0..flags.len()).filter(|&i| flags[i]).collect();
        match kind {
            MaskMode::Hard => MaskedVariant {
                kind,
                source: source.clone(),
                hard_tokens: Some(collapse(source, flags)),
                weights: None,
                masked_positions,
            },
            MaskMode::Soft => MaskedVariant {
                kind,
                source: source.clone(),
                hard_tokens: None,
                weights: Some(flags.iter().map(|&m| if m { blend } else { 0.0 }).collect()),
                masked_positions,
            },
        }
    }

    /// A variant with nothing masked.
    pub fn unmasked(source: &TokenSeq, kind: MaskMode) -> Self {
        Self::from_flags(source, &vec![false; source.len()], kind, 0.0)
    }

    /// Build a variant from explicit masked positions.
    pub fn with_positions(
        source: &TokenSeq,
        positions: &[usize],
        kind: MaskMode,
        blend: f64,
    ) -> Result<Self> {
        let mut flags = vec![false; source.len()];
        for &p in positions {
            if p >= source.len() {
                return Err(Error::invalid(format!("masked position {p} out of range")));
            }
            flags[p] = true;
        }
        if !(0.0..=1.0).contains(&blend) {
            return Err(Error::InvalidMaskSpec(format!("blend {blend} not in [0,1]")));
        }
        if kind == MaskMode::Soft && blend == 0.0 && !positions.is_empty() {
            // weights must be positive exactly at masked positions
            return Ok(Self::unmasked(source, kind));
        }
        Ok(Self::from_flags(source, &flags, kind, blend))
    }

    pub fn is_masked(&self, position: usize) -> bool {
        self.masked_positions.binary_search(&position).is_ok()
    }

    /// Maximal runs of consecutive masked source positions.
    pub fn masked_runs(&self) -> Vec<Range<usize>> {
        let mut runs: Vec<Range<usize>> = Vec::new();
        for &p in &self.masked_positions {
            match runs.last_mut() {
                Some(run) if run.end == p => run.end = p + 1,
                _ => runs.push(p..p + 1),
            }
        }
        runs
    }

    /// Blend weight of each source position (HARD counts as weight 1).
    pub fn position_weights(&self) -> Vec<f64> {
        match (&self.weights, self.kind) {
            (Some(w), MaskMode::Soft) => w.clone(),
            _ => (0..self.source.len())
                .map(|i| if self.is_masked(i) { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    /// Collapsed sentinel form, computed for SOFT variants too.
    pub fn collapsed(&self) -> TokenSeq {
        match &self.hard_tokens {
            Some(t) => t.clone(),
            None => {
                let flags: Vec<bool> = (0..self.source.len()).map(|i| self.is_masked(i)).collect();
                collapse(&self.source, &flags)
            }
        }
    }
}

fn collapse(source: &TokenSeq, flags: &[bool]) -> TokenSeq {
    let mut out = Vec::with_capacity(source.len());
    let mut in_run = false;
    for (tok, &m) in source.tokens().iter().zip(flags) {
        if m {
            if !in_run {
                out.push(MASK_TOKEN.to_string());
            }
        } else {
            out.push(tok.clone());
        }
        in_run = m;
    }
    TokenSeq::from_trusted(out)
}

fn check(seq: &TokenSeq, spec: &MaskSpec, mode: MaskMode) -> Result<()> {
    spec.validate()?;
    if spec.mode != mode {
        return Err(Error::InvalidMaskSpec(format!(
            "spec mode {:?} used for {:?} masking",
            spec.mode, mode
        )));
    }
    if seq.is_empty() && spec.ratio > 0.0 {
        return Err(Error::NothingToMask);
    }
    Ok(())
}

pub fn hard_mask(seq: &TokenSeq, spec: &MaskSpec, seed: u64) -> Result<MaskedVariant> {
    check(seq, spec, MaskMode::Hard)?;
    let flags = select_positions(seq.len(), spec, seed);
    Ok(MaskedVariant::from_flags(seq, &flags, MaskMode::Hard, spec.blend))
}

pub fn soft_mask(seq: &TokenSeq, spec: &MaskSpec, seed: u64) -> Result<MaskedVariant> {
    check(seq, spec, MaskMode::Soft)?;
    let flags = if spec.blend > 0.0 {
        select_positions(seq.len(), spec, seed)
    } else {
        // zero blend leaves every representation untouched
        vec![false; seq.len()]
    };
    Ok(MaskedVariant::from_flags(seq, &flags, MaskMode::Soft, spec.blend))
}

/// Mask according to `spec.mode`.
pub fn mask(seq: &TokenSeq, spec: &MaskSpec, seed: u64) -> Result<MaskedVariant> {
    match spec.mode {
        MaskMode::Hard => hard_mask(seq, spec, seed),
        MaskMode::Soft => soft_mask(seq, spec, seed),
    }
}

/// `count` variants; variant `i` uses seed `mix(base_seed, i)`.
pub fn make_variants(
    seq: &TokenSeq,
    spec: &MaskSpec,
    count: usize,
    base_seed: u64,
) -> Result<Vec<MaskedVariant>> {
    if count == 0 {
        return Err(Error::invalid("variant count must be >= 1"));
    }
    (0..count as u64)
        .map(|i| mask(seq, spec, rng::mix(base_seed, i)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;
    use proptest::prelude::*;

    fn seq(n: usize) -> TokenSeq {
        tokenize(&(0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" "))
    }

    /// Independent oracle: recover masked positions by aligning the collapsed
    /// output against the source (unmasked tokens are unique here).
    fn aligned_masked_count(source: &TokenSeq, hard: &TokenSeq) -> (usize, usize) {
        let kept: Vec<&str> = hard.iter().filter(|t| *t != MASK_TOKEN).collect();
        let sentinels = hard.iter().filter(|t| *t == MASK_TOKEN).count();
        let mut j = 0;
        for t in source.iter() {
            if j < kept.len() && kept[j] == t {
                j += 1;
            }
        }
        assert_eq!(j, kept.len(), "kept tokens must be an ordered subsequence");
        (source.len() - kept.len(), sentinels)
    }

    #[test]
    fn zero_ratio_is_identity() {
        let s = seq(5);
        let v = hard_mask(&s, &MaskSpec::hard(0.0), 3).unwrap();
        assert_eq!(v.hard_tokens.as_ref(), Some(&s));
        assert!(v.masked_positions.is_empty());
    }

    #[test]
    fn full_ratio_collapses_to_one_sentinel() {
        for n in 1..8 {
            let v = hard_mask(&seq(n), &MaskSpec::hard(1.0), n as u64).unwrap();
            assert_eq!(v.hard_tokens.unwrap().tokens(), [MASK_TOKEN]);
            assert_eq!(v.masked_positions.len(), n);
        }
    }

    #[test]
    fn four_tokens_at_point_four_mask_two_over_many_seeds() {
        let s = seq(4);
        let spec = MaskSpec::hard(0.4);
        for seed in 0..1000 {
            let v = hard_mask(&s, &spec, seed).unwrap();
            let (masked, sentinels) = aligned_masked_count(&s, v.hard_tokens.as_ref().unwrap());
            assert_eq!(masked, 2);
            assert!(sentinels == 1 || sentinels == 2);
            assert_eq!(sentinels, v.masked_runs().len());
        }
    }

    #[test]
    fn empty_sequence_errors_only_with_budget() {
        let e = TokenSeq::empty();
        assert!(matches!(
            hard_mask(&e, &MaskSpec::hard(0.4), 0),
            Err(Error::NothingToMask)
        ));
        assert!(hard_mask(&e, &MaskSpec::hard(0.0), 0).is_ok());
    }

    #[test]
    fn mode_mismatch_rejected() {
        assert!(hard_mask(&seq(3), &MaskSpec::soft(0.4, 0.5), 0).is_err());
        assert!(soft_mask(&seq(3), &MaskSpec::hard(0.4), 0).is_err());
    }

    #[test]
    fn soft_examples() {
        let s = seq(6);
        let v = soft_mask(&s, &MaskSpec::soft(0.4, 0.0), 9).unwrap();
        assert!(v.weights.unwrap().iter().all(|&w| w == 0.0));
        let v = soft_mask(&s, &MaskSpec::soft(1.0, 0.5), 9).unwrap();
        assert_eq!(v.weights.unwrap(), vec![0.5; 6]);
    }

    #[test]
    fn variants_k32_exact_budget() {
        let s = seq(10);
        let vs = make_variants(&s, &MaskSpec::hard(0.4), 32, 77).unwrap();
        assert_eq!(vs.len(), 32);
        for v in &vs {
            let (masked, _) = aligned_masked_count(&s, v.hard_tokens.as_ref().unwrap());
            assert_eq!(masked, 4);
        }
        assert_eq!(vs, make_variants(&s, &MaskSpec::hard(0.4), 32, 77).unwrap());
        let one = make_variants(&s, &MaskSpec::hard(0.4), 1, 77).unwrap();
        assert_eq!(one[0], hard_mask(&s, &MaskSpec::hard(0.4), rng::mix(77, 0)).unwrap());
        assert!(make_variants(&s, &MaskSpec::hard(0.4), 0, 77).is_err());
    }

    #[test]
    fn budget_rounding() {
        assert_eq!(mask_budget(4, 0.4), 2);
        assert_eq!(mask_budget(10, 0.4), 4);
        assert_eq!(mask_budget(10, 0.7), 7);
        assert_eq!(mask_budget(10, 0.01), 1);
        assert_eq!(mask_budget(3, 0.0), 0);
        assert_eq!(mask_budget(0, 0.5), 0);
    }

    proptest! {
        #[test]
        fn budget_exact_and_modes_agree(n in 1usize..30, ratio in 0.0f64..=1.0, span_mean in 1.0f64..6.0, seed: u64) {
            let s = seq(n);
            let hard = MaskSpec { ratio, span_mean, mode: MaskMode::Hard, blend: 0.5 };
            let soft = hard.with_mode(MaskMode::Soft);
            let h = hard_mask(&s, &hard, seed).unwrap();
            let sv = soft_mask(&s, &soft, seed).unwrap();
            prop_assert_eq!(h.masked_positions.len(), mask_budget(n, ratio));
            prop_assert_eq!(&h.masked_positions, &sv.masked_positions);
            let w = sv.weights.as_ref().unwrap();
            prop_assert_eq!(w.len(), n);
            for (i, &wi) in w.iter().enumerate() {
                prop_assert_eq!(wi > 0.0, sv.is_masked(i));
            }
            let ht = h.hard_tokens.as_ref().unwrap();
            prop_assert_eq!(ht.iter().filter(|t| *t == MASK_TOKEN).count(), h.masked_runs().len());
            let kept: Vec<&str> = ht.iter().filter(|t| *t != MASK_TOKEN).collect();
            let expected: Vec<&str> = s.iter().enumerate().filter(|(i, _)| !h.is_masked(*i)).map(|(_, t)| t).collect();
            prop_assert_eq!(kept, expected);
            prop_assert_eq!(h, hard_mask(&s, &hard, seed).unwrap());
        }
    }
}
