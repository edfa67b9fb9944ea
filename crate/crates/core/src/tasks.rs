//! Synthetic sequence-classification tasks.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::model::PAD;
use crate::rng::Rng;

/// The trigram searched for by the pattern task.
pub const TRIGRAM: [usize; 3] = [1, 2, 3];

/// Token ids of the bracketed-expression task.
pub mod listops {
    pub const DIGIT0: usize = 1;
    pub const OPEN: usize = 5;
    pub const CLOSE: usize = 6;
    pub const MAX: usize = 7;
    pub const MIN: usize = 8;
    pub const SUM_MOD: usize = 9;
    pub const VOCAB: usize = 10;
    pub const MODULUS: usize = 4;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Pattern,
    MiniListops,
    Majority,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Pattern, Task::MiniListops, Task::Majority];

    pub fn name(self) -> &'static str {
        match self {
            Task::Pattern => "pattern",
            Task::MiniListops => "mini_listops",
            Task::Majority => "majority",
        }
    }

    pub fn classes(self) -> usize {
        match self {
            Task::MiniListops => listops::MODULUS,
            _ => 2,
        }
    }

    /// Smallest vocabulary the task's token scheme fits in.
    pub fn min_vocab(self) -> usize {
        match self {
            Task::MiniListops => listops::VOCAB,
            _ => 4,
        }
    }

    /// Ground-truth label of a token sequence, PAD ignored.
    pub fn label(self, tokens: &[usize]) -> Result<usize> {
        match self {
            Task::Pattern => Ok(pattern_label(tokens)),
            Task::Majority => majority_label(tokens),
            Task::MiniListops => listops_eval(tokens),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown task '{s}'")))
    }
}

pub fn pattern_label(tokens: &[usize]) -> usize {
    tokens.windows(3).any(|w| w == TRIGRAM) as usize
}

/// 0 when symbol 1 is the more frequent, 1 when symbol 2 is.
pub fn majority_label(tokens: &[usize]) -> Result<usize> {
    let ones = tokens.iter().filter(|&&t| t == 1).count();
    let twos = tokens.iter().filter(|&&t| t == 2).count();
    match ones.cmp(&twos) {
        core::cmp::Ordering::Greater => Ok(0),
        core::cmp::Ordering::Less => Ok(1),
        core::cmp::Ordering::Equal => Err(Error::InvalidConfig(String::from("majority tie"))),
    }
}

/// Value of a serialized bracketed expression.
pub fn listops_eval(tokens: &[usize]) -> Result<usize> {
    let body: Vec<usize> = tokens.iter().copied().filter(|&t| t != PAD).collect();
    let (v, used) = parse_expr(&body, 0)?;
    if used != body.len() {
        return Err(malformed("trailing tokens"));
    }
    Ok(v)
}

fn malformed(what: &str) -> Error {
    Error::InvalidConfig(format!("malformed expression: {what}"))
}

fn parse_expr(t: &[usize], at: usize) -> Result<(usize, usize)> {
    use listops::*;
    match t.get(at) {
        Some(&d) if (DIGIT0..DIGIT0 + MODULUS).contains(&d) => Ok((d - DIGIT0, at + 1)),
        Some(&OPEN) => {
            let op = *t.get(at + 1).ok_or_else(|| malformed("missing operator"))?;
            let mut args = Vec::new();
            let mut i = at + 2;
            while t.get(i) != Some(&CLOSE) {
                if i >= t.len() {
                    return Err(malformed("unclosed bracket"));
                }
                let (v, next) = parse_expr(t, i)?;
                args.push(v);
                i = next;
            }
            if args.is_empty() {
                return Err(malformed("no operands"));
            }
            let v = match op {
                MAX => args.iter().copied().max().unwrap_or(0),
                MIN => args.iter().copied().min().unwrap_or(0),
                SUM_MOD => args.iter().sum::<usize>() % MODULUS,
                _ => return Err(malformed("unknown operator")),
            };
            Ok((v, i + 1))
        }
        _ => Err(malformed("unexpected token")),
    }
}

/// Labelled sequences, each at most `seq_len` tokens and unpadded.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub seq_len: usize,
    pub vocab: usize,
    pub tokens: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.task.classes()
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            task: self.task,
            seq_len: self.seq_len,
            vocab: self.vocab,
            tokens: idx.iter().map(|&i| self.tokens[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Fraction of the most common label.
    pub fn majority_baseline(&self) -> f64 {
        let mut counts = vec![0usize; self.classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts.iter().copied().max().unwrap_or(0) as f64 / self.len().max(1) as f64
    }

    /// 60/20/20 train, validation and test split in generation order.
    pub fn split(&self) -> Splits {
        let n = self.len();
        let a = n * 6 / 10;
        let b = a + n * 2 / 10;
        let idx: Vec<usize> = (0..n).collect();
        Splits {
            train: self.subset(&idx[..a]),
            val: self.subset(&idx[a..b]),
            test: self.subset(&idx[b..]),
        }
    }

    /// Batches in a shuffled order, the last one possibly short.
    pub fn batches(&self, batch_size: usize, rng: &mut Rng) -> Vec<Batch> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        rng.shuffle(&mut order);
        order
            .chunks(batch_size.max(1))
            .map(|c| self.batch(c))
            .collect()
    }

    pub fn batch(&self, idx: &[usize]) -> Batch {
        let mut tokens = Vec::with_capacity(idx.len());
        let mut lengths = Vec::with_capacity(idx.len());
        for &i in idx {
            let seq = &self.tokens[i];
            let mut row = seq.clone();
            row.resize(self.seq_len, PAD);
            tokens.push(row);
            lengths.push(seq.len());
        }
        Batch {
            tokens,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            lengths,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Padded token rows with their labels and true lengths.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub tokens: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
    pub lengths: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn gen_task(
    task: Task,
    rng: &mut Rng,
    n_samples: usize,
    seq_len: usize,
    vocab: usize,
) -> Result<Dataset> {
    if n_samples == 0 {
        return Err(Error::InvalidConfig(String::from(
            "n_samples must be positive",
        )));
    }
    if vocab < task.min_vocab() {
        return Err(Error::InvalidConfig(format!(
            "{task} needs a vocabulary of at least {}, got {vocab}",
            task.min_vocab()
        )));
    }
    let min_len = match task {
        Task::MiniListops => 5,
        _ => 6,
    };
    if seq_len < min_len {
        return Err(Error::InvalidConfig(format!(
            "{task} needs sequences of at least {min_len} tokens, got {seq_len}"
        )));
    }
    let mut tokens = Vec::with_capacity(n_samples);
    let mut labels = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let seq = match task {
            Task::Pattern => gen_pattern(rng, seq_len, vocab, i % 2 == 1),
            Task::Majority => gen_majority(rng, seq_len, vocab, i % 2),
            Task::MiniListops => gen_listops(rng, seq_len),
        };
        labels.push(task.label(&seq)?);
        tokens.push(seq);
    }
    Ok(Dataset {
        task,
        seq_len,
        vocab,
        tokens,
        labels,
    })
}

fn random_len(rng: &mut Rng, n: usize) -> usize {
    n / 2 + rng.below(n - n / 2 + 1)
}

fn symbol(rng: &mut Rng, vocab: usize) -> usize {
    1 + rng.below(vocab - 1)
}

fn gen_pattern(rng: &mut Rng, n: usize, vocab: usize, positive: bool) -> Vec<usize> {
    let len = random_len(rng, n);
    let mut seq: Vec<usize> = (0..len).map(|_| symbol(rng, vocab)).collect();
    if positive {
        let at = rng.below(len - 2);
        seq[at..at + 3].copy_from_slice(&TRIGRAM);
    } else {
        let fillers: Vec<usize> = (1..vocab)
            .filter(|&s| s != TRIGRAM[0] && s != TRIGRAM[2])
            .collect();
        while let Some(at) = seq.windows(3).position(|w| w == TRIGRAM) {
            seq[at + 2] = fillers[rng.below(fillers.len())];
        }
    }
    seq
}

fn gen_majority(rng: &mut Rng, n: usize, vocab: usize, label: usize) -> Vec<usize> {
    let len = random_len(rng, n);
    let noise = if vocab > 3 { 0.25 } else { 0.0 };
    let mut seq: Vec<usize> = (0..len)
        .map(|_| {
            if rng.bernoulli(noise) {
                3 + rng.below(vocab - 3)
            } else {
                1 + rng.below(2)
            }
        })
        .collect();
    let (winner, loser) = if label == 0 { (1, 2) } else { (2, 1) };
    let count = |s: &[usize], v: usize| s.iter().filter(|&&t| t == v).count();
    while count(&seq, winner) <= count(&seq, loser) {
        let pos: Vec<usize> = (0..len).filter(|&i| seq[i] != winner).collect();
        let at = pos[rng.below(pos.len())];
        seq[at] = winner;
    }
    seq
}

/// Chance that an operand is itself a bracketed expression.
const NEST_PROBABILITY: f64 = 0.15;

fn gen_listops(rng: &mut Rng, n: usize) -> Vec<usize> {
    loop {
        let mut seq = Vec::new();
        write_expr(rng, 2, &mut seq);
        if seq.len() <= n {
            return seq;
        }
    }
}

fn write_expr(rng: &mut Rng, depth: usize, out: &mut Vec<usize>) {
    use listops::*;
    out.push(OPEN);
    out.push([MAX, MIN, SUM_MOD][rng.below(3)]);
    let args = 2 + rng.below(3);
    for _ in 0..args {
        if depth > 1 && rng.bernoulli(NEST_PROBABILITY) {
            write_expr(rng, depth - 1, out);
        } else {
            out.push(DIGIT0 + rng.below(MODULUS));
        }
    }
    out.push(CLOSE);
}

#[cfg(test)]
mod tests {
    use super::*;
    use listops::*;

    #[test]
    fn pattern_labels() {
        let mut seq = vec![4; 10];
        assert_eq!(pattern_label(&seq), 0);
        seq[5..8].copy_from_slice(&TRIGRAM);
        assert_eq!(pattern_label(&seq), 1);
        assert_eq!(pattern_label(&[1, 2]), 0);
    }

    #[test]
    fn majority_labels() {
        let mut seq = vec![1; 6];
        seq.extend([2; 4]);
        assert_eq!(majority_label(&seq).unwrap(), 0);
        assert_eq!(majority_label(&[2, 2, 1, 3]).unwrap(), 1);
        assert!(majority_label(&[1, 2]).is_err());
    }

    #[test]
    fn listops_values() {
        let d = |v: usize| DIGIT0 + v;
        assert_eq!(
            listops_eval(&[OPEN, MAX, d(1), d(3), d(2), CLOSE]).unwrap(),
            3
        );
        assert_eq!(
            listops_eval(&[OPEN, MIN, d(1), d(3), d(2), CLOSE]).unwrap(),
            1
        );
        assert_eq!(
            listops_eval(&[OPEN, SUM_MOD, d(3), d(3), d(2), CLOSE]).unwrap(),
            0
        );
        let nested = [
            OPEN,
            MAX,
            d(0),
            OPEN,
            SUM_MOD,
            d(1),
            d(1),
            CLOSE,
            d(1),
            CLOSE,
            PAD,
            PAD,
        ];
        assert_eq!(listops_eval(&nested).unwrap(), 2);
        assert!(listops_eval(&[OPEN, MAX, d(1)]).is_err());
        assert!(listops_eval(&[OPEN, 3, d(1), CLOSE]).is_err());
        assert!(listops_eval(&[d(1), d(2)]).is_err());
    }

    #[test]
    fn generators_agree_with_oracles() {
        for task in Task::ALL {
            let data = gen_task(task, &mut Rng::new(4), 300, 40, 10).unwrap();
            assert_eq!(data.len(), 300);
            for (seq, &label) in data.tokens.iter().zip(&data.labels) {
                assert!(seq.len() <= 40 && seq.iter().all(|&t| t != PAD && t < 10));
                assert_eq!(task.label(seq).unwrap(), label);
            }
            assert!(data.majority_baseline() < 0.6, "{task}");
        }
    }

    #[test]
    fn binary_tasks_are_balanced() {
        for task in [Task::Pattern, Task::Majority] {
            let data = gen_task(task, &mut Rng::new(5), 100, 32, 6).unwrap();
            assert_eq!(data.labels.iter().sum::<usize>(), 50);
            assert!(data.tokens.iter().all(|s| (16..=32).contains(&s.len())));
        }
    }

    #[test]
    fn listops_depth_is_bounded() {
        let data = gen_task(Task::MiniListops, &mut Rng::new(6), 200, 64, 10).unwrap();
        for seq in &data.tokens {
            let mut depth = 0i32;
            let mut max = 0;
            for &t in seq {
                depth += (t == OPEN) as i32 - (t == CLOSE) as i32;
                max = max.max(depth);
            }
            assert!(max <= 2 && depth == 0);
        }
    }

    #[test]
    fn generation_is_seeded() {
        let a = gen_task(Task::Pattern, &mut Rng::new(7), 20, 16, 5).unwrap();
        let b = gen_task(Task::Pattern, &mut Rng::new(7), 20, 16, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_sizes() {
        let mut rng = Rng::new(0);
        assert!(gen_task(Task::Pattern, &mut rng, 0, 16, 5).is_err());
        assert!(gen_task(Task::Pattern, &mut rng, 4, 16, 3).is_err());
        assert!(gen_task(Task::MiniListops, &mut rng, 4, 16, 9).is_err());
        assert!(gen_task(Task::Majority, &mut rng, 4, 2, 5).is_err());
    }

    #[test]
    fn split_and_batches() {
        let data = gen_task(Task::Majority, &mut Rng::new(8), 50, 12, 5).unwrap();
        let s = data.split();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (30, 10, 10));
        let batches = s.train.batches(8, &mut Rng::new(1));
        assert_eq!(
            batches.iter().map(Batch::len).collect::<Vec<_>>(),
            vec![8, 8, 8, 6]
        );
        for b in &batches {
            for ((row, &len), &label) in b.tokens.iter().zip(&b.lengths).zip(&b.labels) {
                assert_eq!(row.len(), 12);
                assert!(row[len..].iter().all(|&t| t == PAD));
                assert_eq!(majority_label(row).unwrap(), label);
            }
        }
    }

    #[test]
    fn names_round_trip() {
        for t in Task::ALL {
            assert_eq!(t.name().parse::<Task>().unwrap(), t);
        }
        assert!("listops".parse::<Task>().is_err());
    }
}
