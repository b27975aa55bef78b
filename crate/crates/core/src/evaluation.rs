//! Pixel metrics, pooled cross-validation scoring, loss-trace statistics and
//! character-level transcription scoring.

use std::fmt;

use thiserror::Error;

use crate::ink_model::PredictionImage;
use crate::labeling::LabelImage;
use crate::raster::Rect;
use crate::unwrap::SurfaceVolume;

/// Lower/upper clamp applied to probabilities inside the log loss.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("prediction {pred:?} and labels {label:?} differ in size")]
    DimMismatch { pred: (usize, usize), label: (usize, usize) },
    #[error("no pixels to evaluate")]
    EmptyMask,
    #[error("no folds given")]
    NoFolds,
    #[error("folds {0} and {1} overlap")]
    Overlap(usize, usize),
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("no samples in the second half of the series")]
    EmptySecondHalf,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("transcriptions have {gt} and {pred} lines")]
    LineCount { gt: usize, pred: usize },
    #[error("invalid threshold {0}")]
    BadThreshold(f64),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Which label value counts as positive when thresholding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PositiveClass {
    #[default]
    Ink,
    NonInk,
}

/// Metrics that are undefined for the data (no positives, no negatives)
/// are `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelMetrics {
    pub bce: f64,
    pub dice: Option<f64>,
    pub recall: Option<f64>,
    pub fpr: Option<f64>,
    pub counts: Confusion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, o: &Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }

    pub fn dice(&self) -> Option<f64> {
        let d = 2 * self.tp + self.fp + self.fn_;
        (d > 0).then(|| 2.0 * self.tp as f64 / d as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    pub fn fpr(&self) -> Option<f64> {
        let d = self.fp + self.tn;
        (d > 0).then(|| self.fp as f64 / d as f64)
    }
}

/// Dice of two equally sized boolean masks; `None` when both are empty.
pub fn dice_masks(a: &[bool], b: &[bool]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let mut c = Confusion::default();
    for (&p, &y) in a.iter().zip(b) {
        match (p, y) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c.dice()
}

/// Streaming accumulator of `(p, y)` pairs.
#[derive(Debug, Clone, Default)]
pub struct MetricAccumulator {
    bce_sum: f64,
    n: u64,
    counts: Confusion,
}

impl MetricAccumulator {
    pub fn push(&mut self, p: f64, ink: bool, threshold: f64, class: PositiveClass) {
        let q = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        self.bce_sum -= if ink { q.ln() } else { (1.0 - q).ln() };
        self.n += 1;
        let (pred, truth) = match class {
            PositiveClass::Ink => (p >= threshold, ink),
            PositiveClass::NonInk => (p < threshold, !ink),
        };
        match (pred, truth) {
            (true, true) => self.counts.tp += 1,
            (true, false) => self.counts.fp += 1,
            (false, true) => self.counts.fn_ += 1,
            (false, false) => self.counts.tn += 1,
        }
    }

    pub fn finish(&self) -> Result<PixelMetrics> {
        if self.n == 0 {
            return Err(EvalError::EmptyMask);
        }
        Ok(PixelMetrics {
            bce: self.bce_sum / self.n as f64,
            dice: self.counts.dice(),
            recall: self.counts.recall(),
            fpr: self.counts.fpr(),
            counts: self.counts,
        })
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(EvalError::BadThreshold(t))
    }
}

fn accumulate(acc: &mut MetricAccumulator, pred: &PredictionImage, label: &LabelImage, rect: Rect, threshold: f64, class: PositiveClass) -> Result<()> {
    if pred.dims() != label.dims() {
        return Err(EvalError::DimMismatch {
            pred: pred.dims(),
            label: label.dims(),
        });
    }
    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            if *label.region.get(x, y) && *pred.mask.get(x, y) {
                acc.push(*pred.prob.get(x, y), *label.ink.get(x, y), threshold, class);
            }
        }
    }
    Ok(())
}

/// Metrics over pixels where both the label region and the prediction mask
/// are set, with ink as the positive class.
pub fn pixel_metrics(pred: &PredictionImage, label: &LabelImage, threshold: f64) -> Result<PixelMetrics> {
    pixel_metrics_with(pred, label, threshold, PositiveClass::Ink)
}

pub fn pixel_metrics_with(pred: &PredictionImage, label: &LabelImage, threshold: f64, class: PositiveClass) -> Result<PixelMetrics> {
    check_threshold(threshold)?;
    let (w, h) = label.dims();
    let mut acc = MetricAccumulator::default();
    accumulate(&mut acc, pred, label, Rect::new(0, 0, w, h), threshold, class)?;
    acc.finish()
}

/// One held-out region's prediction.
#[derive(Debug, Clone, Copy)]
pub struct FoldEval<'a> {
    /// Identifies the surface; rects of one surface must not overlap.
    pub surface: usize,
    pub rect: Rect,
    pub pred: &'a PredictionImage,
    pub label: &'a LabelImage,
}

/// Pools every fold's pixels and computes the metrics once.
pub fn compile_cross_validation(folds: &[FoldEval<'_>], threshold: f64, class: PositiveClass) -> Result<PixelMetrics> {
    check_threshold(threshold)?;
    if folds.is_empty() {
        return Err(EvalError::NoFolds);
    }
    for (i, a) in folds.iter().enumerate() {
        for (j, b) in folds.iter().enumerate().skip(i + 1) {
            if a.surface == b.surface && a.rect.intersects(&b.rect) {
                return Err(EvalError::Overlap(i, j));
            }
        }
    }
    let mut acc = MetricAccumulator::default();
    for f in folds {
        accumulate(&mut acc, f.pred, f.label, f.rect, threshold, class)?;
    }
    acc.finish()
}

/// Mean and population standard deviation over entries with
/// `batch > max_batch / 2`.
pub fn trace_stats(series: &[(usize, f64)]) -> Result<(f64, f64)> {
    if series.len() < 2 {
        return Err(EvalError::TooFewSamples(series.len()));
    }
    let max = series.iter().map(|s| s.0).max().unwrap_or(0) as f64;
    let tail: Vec<f64> = series.iter().filter(|s| s.0 as f64 > max / 2.0).map(|s| s.1).collect();
    if tail.is_empty() {
        return Err(EvalError::EmptySecondHalf);
    }
    let n = tail.len() as f64;
    let mean = tail.iter().sum::<f64>() / n;
    let var = tail.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Best single-channel global threshold classifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdOracle {
    pub channel: usize,
    /// `true`: ink where value >= threshold; `false`: ink where value < threshold.
    pub above: bool,
    pub threshold: f64,
    pub dice: f64,
}

/// Sweeps every depth channel, both polarities and `steps` thresholds
/// evenly spaced over the pooled value range; Dice is computed on the pooled
/// pixels of all regions.
pub fn threshold_oracle(regions: &[(&SurfaceVolume, &LabelImage, Rect)], steps: usize) -> Result<ThresholdOracle> {
    let Some(first) = regions.first() else {
        return Err(EvalError::NoFolds);
    };
    let depth = regions.iter().map(|r| r.0.depth).min().unwrap_or(first.0.depth);
    let steps = steps.max(2);
    let mut best: Option<ThresholdOracle> = None;
    for k in 0..depth {
        let mut vals: Vec<(f64, bool)> = Vec::new();
        for (sv, label, rect) in regions {
            if sv.dims() != label.dims() {
                return Err(EvalError::DimMismatch {
                    pred: sv.dims(),
                    label: label.dims(),
                });
            }
            for y in rect.y0..rect.y1 {
                for x in rect.x0..rect.x1 {
                    if *label.region.get(x, y) && sv.is_valid(x, y, k) {
                        vals.push((sv.get(x, y, k), *label.ink.get(x, y)));
                    }
                }
            }
        }
        if vals.is_empty() {
            continue;
        }
        let lo = vals.iter().map(|v| v.0).fold(f64::INFINITY, f64::min);
        let hi = vals.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
        let total_pos = vals.iter().filter(|v| v.1).count() as u64;
        // Histogram per threshold bucket: bucket i holds values in [t_i, t_{i+1}).
        let thresholds: Vec<f64> = (0..steps).map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64).collect();
        let mut pos = vec![0u64; steps + 1];
        let mut neg = vec![0u64; steps + 1];
        for &(v, ink) in &vals {
            let b = thresholds.partition_point(|&t| t <= v);
            if ink {
                pos[b] += 1;
            } else {
                neg[b] += 1;
            }
        }
        // Values >= thresholds[i] live in buckets i+1.. .
        let mut above_pos = 0u64;
        let mut above_neg = 0u64;
        for i in (0..steps).rev() {
            above_pos += pos[i + 1];
            above_neg += neg[i + 1];
            let total_neg = vals.len() as u64 - total_pos;
            for (above, tp, fp) in [
                (true, above_pos, above_neg),
                (false, total_pos - above_pos, total_neg - above_neg),
            ] {
                let fn_ = total_pos - tp;
                let d = 2 * tp + fp + fn_;
                let dice = if d == 0 { 0.0 } else { 2.0 * tp as f64 / d as f64 };
                if best.is_none_or(|b| dice > b.dice) {
                    best = Some(ThresholdOracle {
                        channel: k,
                        above,
                        threshold: thresholds[i],
                        dice,
                    });
                }
            }
        }
    }
    best.ok_or(EvalError::EmptyMask)
}

/// One column of a metrics table.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into())
}

impl PixelMetrics {
    pub const CSV_HEADER: &'static str = "bce,dice,recall,fpr,tp,fp,fn,tn";

    /// Absent values are written as empty fields.
    pub fn csv_row(&self) -> String {
        let o = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        format!(
            "{:.6},{},{},{},{},{},{},{}",
            self.bce,
            o(self.dice),
            o(self.recall),
            o(self.fpr),
            self.counts.tp,
            self.counts.fp,
            self.counts.fn_,
            self.counts.tn
        )
    }
}

impl fmt::Display for PixelMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8}{:>10}", "metric", "value")?;
        writeln!(f, "{:<8}{:>10.4}", "bce", self.bce)?;
        writeln!(f, "{:<8}{:>10}", "dice", fmt_opt(self.dice))?;
        writeln!(f, "{:<8}{:>10}", "recall", fmt_opt(self.recall))?;
        write!(f, "{:<8}{:>10}", "fpr", fmt_opt(self.fpr))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Token {
    Char { c: char, certain: bool },
    /// Indistinct ink.
    Trace,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptionLine {
    pub layer: Option<String>,
    pub tokens: Vec<Token>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcription {
    pub lines: Vec<TranscriptionLine>,
}

fn parse_line(s: &str, line: usize) -> Result<Vec<Token>> {
    let err = |msg: &str| EvalError::Parse {
        line,
        msg: msg.to_string(),
    };
    let mut body = s.trim();
    body = body.strip_prefix(']').unwrap_or(body);
    body = body.strip_suffix('[').unwrap_or(body);
    let mut tokens = Vec::new();
    let mut it = body.chars().filter(|c| !c.is_whitespace());
    while let Some(c) = it.next() {
        match c {
            '.' => tokens.push(Token::Trace),
            '(' => {
                let inner = it.next().ok_or_else(|| err("unbalanced '('"))?;
                if matches!(inner, '(' | ')' | '[' | ']' | '.') {
                    return Err(err(&format!("unexpected {inner:?} inside parentheses")));
                }
                if it.next() != Some(')') {
                    return Err(err("expected ')' after uncertain character"));
                }
                tokens.push(Token::Char { c: inner, certain: false });
            }
            ')' => return Err(err("unbalanced ')'")),
            '[' | ']' => return Err(err(&format!("misplaced {c:?}"))),
            _ => tokens.push(Token::Char { c, certain: true }),
        }
    }
    if tokens.is_empty() {
        return Err(err("line has no tokens"));
    }
    Ok(tokens)
}

/// Parses the line-per-row format: `.` trace, bare letter certain, `(x)`
/// uncertain, optional `]`/`[` wrappers, `# layer <name>` rows. Blank lines
/// and other `#` rows are ignored.
pub fn parse_transcription(text: &str) -> Result<Transcription> {
    let mut layer = None;
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let t = raw.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(c) = t.strip_prefix('#') {
            if let Some(name) = c.trim().strip_prefix("layer") {
                layer = Some(name.trim().to_string());
            }
            continue;
        }
        lines.push(TranscriptionLine {
            layer: layer.clone(),
            tokens: parse_line(t, i + 1)?,
        });
    }
    if lines.is_empty() {
        return Err(EvalError::Parse {
            line: 0,
            msg: "no transcription lines".into(),
        });
    }
    Ok(Transcription { lines })
}

impl fmt::Display for Transcription {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut layer: Option<&String> = None;
        for l in &self.lines {
            if l.layer.as_ref() != layer {
                if let Some(name) = &l.layer {
                    writeln!(f, "# layer {name}")?;
                }
                layer = l.layer.as_ref();
            }
            write!(f, "]")?;
            for t in &l.tokens {
                match t {
                    Token::Trace => write!(f, ".")?,
                    Token::Char { c, certain: true } => write!(f, "{c}")?,
                    Token::Char { c, certain: false } => write!(f, "({c})")?,
                }
            }
            writeln!(f, "[")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharMetrics {
    pub gt_chars: usize,
    pub matched: usize,
    pub false_chars: usize,
    pub recall: f64,
    pub fpr: f64,
}

impl CharMetrics {
    pub const CSV_HEADER: &'static str = "gt_chars,matched,false_chars,recall,fpr";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.4},{:.4}",
            self.gt_chars, self.matched, self.false_chars, self.recall, self.fpr
        )
    }
}

impl fmt::Display for CharMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "characters {}  matched {}  false {}  recall {:.2}  fpr {:.2}",
            self.gt_chars, self.matched, self.false_chars, self.recall, self.fpr
        )
    }
}

const TRACE_COST: f64 = 0.25;
const INDEL_COST: f64 = 1.0;

fn sub_cost(a: Token, b: Token) -> f64 {
    match (a, b) {
        (Token::Char { c: x, .. }, Token::Char { c: y, .. }) => {
            if x == y {
                0.0
            } else {
                1.0
            }
        }
        _ => TRACE_COST,
    }
}

/// Aligned pair; `None` marks a gap.
pub type AlignedPair = (Option<Token>, Option<Token>);

/// Minimum-cost alignment of two token rows. On ties the backtrace prefers
/// the diagonal, then a gt-only step, then a pred-only step.
pub fn align(gt: &[Token], pred: &[Token]) -> Vec<AlignedPair> {
    let (n, m) = (gt.len(), pred.len());
    let w = m + 1;
    let mut d = vec![0.0f64; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i as f64 * INDEL_COST;
    }
    for j in 0..=m {
        d[j] = j as f64 * INDEL_COST;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[(i - 1) * w + j - 1] + sub_cost(gt[i - 1], pred[j - 1]);
            let del = d[(i - 1) * w + j] + INDEL_COST;
            let ins = d[i * w + j - 1] + INDEL_COST;
            d[i * w + j] = diag.min(del).min(ins);
        }
    }
    let mut out = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 && here == d[(i - 1) * w + j - 1] + sub_cost(gt[i - 1], pred[j - 1]) {
            out.push((Some(gt[i - 1]), Some(pred[j - 1])));
            i -= 1;
            j -= 1;
        } else if i > 0 && here == d[(i - 1) * w + j] + INDEL_COST {
            out.push((Some(gt[i - 1]), None));
            i -= 1;
        } else {
            out.push((None, Some(pred[j - 1])));
            j -= 1;
        }
    }
    out.reverse();
    out
}

/// Character recall and false-positive rate. Lines are paired by index
/// across all layers. With `strict` off, uncertain predicted characters are
/// dropped before alignment.
pub fn char_metrics(gt: &Transcription, pred: &Transcription, strict: bool) -> Result<CharMetrics> {
    if gt.lines.len() != pred.lines.len() {
        return Err(EvalError::LineCount {
            gt: gt.lines.len(),
            pred: pred.lines.len(),
        });
    }
    let mut gt_chars = 0;
    let mut matched = 0;
    let mut false_chars = 0;
    for (g, p) in gt.lines.iter().zip(&pred.lines) {
        gt_chars += g.tokens.iter().filter(|t| matches!(t, Token::Char { .. })).count();
        let ptoks: Vec<Token> = p
            .tokens
            .iter()
            .copied()
            .filter(|t| strict || !matches!(t, Token::Char { certain: false, .. }))
            .collect();
        for pair in align(&g.tokens, &ptoks) {
            match pair {
                (Some(Token::Char { c: a, .. }), Some(Token::Char { c: b, .. })) => {
                    if a == b {
                        matched += 1;
                    } else {
                        false_chars += 1;
                    }
                }
                (None, Some(Token::Char { .. })) => false_chars += 1,
                _ => {}
            }
        }
    }
    let recall = if gt_chars == 0 { 0.0 } else { matched as f64 / gt_chars as f64 };
    let fpr = false_chars as f64 / (matched + false_chars).max(1) as f64;
    Ok(CharMetrics {
        gt_chars,
        matched,
        false_chars,
        recall,
        fpr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ch(c: char) -> Token {
        Token::Char { c, certain: true }
    }

    #[test]
    fn parse_basic_line() {
        let t = parse_transcription("].HN[").unwrap();
        assert_eq!(t.lines[0].tokens, vec![Token::Trace, ch('H'), ch('N')]);
        let u = parse_transcription("].(N)OYK.[").unwrap();
        assert_eq!(
            u.lines[0].tokens,
            vec![
                Token::Trace,
                Token::Char { c: 'N', certain: false },
                ch('O'),
                ch('Y'),
                ch('K'),
                Token::Trace
            ]
        );
        assert!(parse_transcription("]((A)[").is_err());
        assert!(parse_transcription("](A[").is_err());
        assert!(parse_transcription("]A)[").is_err());
    }

    #[test]
    fn display_round_trips() {
        let text = "# layer a\n].(o)μ.[\n# layer b\n]ν[\n";
        let t = parse_transcription(text).unwrap();
        assert_eq!(t.to_string(), text);
        assert_eq!(t.lines[1].layer.as_deref(), Some("b"));
    }

    #[test]
    fn traces_never_score() {
        let gt = parse_transcription("]ABC[").unwrap();
        let pred = parse_transcription("]...[").unwrap();
        let m = char_metrics(&gt, &pred, true).unwrap();
        assert_eq!((m.matched, m.false_chars, m.fpr), (0, 0, 0.0));
    }

    #[test]
    fn substitution_preferred_on_ties() {
        // A vs B: substitution (1) ties with nothing cheaper than two indels (2).
        let a = align(&[ch('A')], &[ch('B')]);
        assert_eq!(a, vec![(Some(ch('A')), Some(ch('B')))]);
    }

    #[test]
    fn non_strict_drops_uncertain_predictions() {
        let gt = parse_transcription("]AB[").unwrap();
        let pred = parse_transcription("]A(X)[").unwrap();
        let strict = char_metrics(&gt, &pred, true).unwrap();
        assert_eq!((strict.matched, strict.false_chars), (1, 1));
        let lax = char_metrics(&gt, &pred, false).unwrap();
        assert_eq!((lax.matched, lax.false_chars), (1, 0));
    }

    #[test]
    fn trace_stats_hand_case() {
        let (m, s) = trace_stats(&[(1, 0.0), (2, 10.0), (3, 10.0)]).unwrap();
        assert_eq!((m, s), (10.0, 0.0));
        assert_eq!(trace_stats(&[(1, 0.5)]), Err(EvalError::TooFewSamples(1)));
    }
}
