//! Brute-force interpolated modified Kneser-Ney over strings.
//!
//! Recomputes every count from the raw sentences on each query. Slow, but it
//! shares no code or data structures with the library model.

use std::collections::{BTreeMap, BTreeSet};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

pub struct Oracle {
    order: usize,
    /// Every word that can be predicted, end marker included.
    predictable: Vec<String>,
    /// Raw counts of the highest order.
    top: BTreeMap<Vec<String>, u64>,
}

impl Oracle {
    pub fn new(sentences: &[Vec<String>], order: usize, predictable: Vec<String>) -> Self {
        let mut top = BTreeMap::new();
        for s in sentences {
            let mut padded = vec![BOS.to_string(); order - 1];
            padded.extend(s.iter().cloned());
            padded.push(EOS.to_string());
            for i in 0..=padded.len() - order {
                *top.entry(padded[i..i + order].to_vec()).or_insert(0) += 1;
            }
        }
        Self { order, predictable, top }
    }

    /// Counts used at n-gram length `k`: raw at the top, otherwise the number
    /// of distinct words seen immediately left of each k-gram.
    fn counts(&self, k: usize) -> BTreeMap<Vec<String>, u64> {
        if k == self.order {
            return self.top.clone();
        }
        let above = self.counts(k + 1);
        let mut left: BTreeMap<Vec<String>, BTreeSet<String>> = BTreeMap::new();
        for gram in above.keys() {
            left.entry(gram[1..].to_vec()).or_default().insert(gram[0].clone());
        }
        left.into_iter().map(|(g, s)| (g, s.len() as u64)).collect()
    }

    fn discount(&self, k: usize, c: u64) -> f64 {
        let counts = self.counts(k);
        let n = |x: u64| counts.values().filter(|&&c| c == x).count() as f64;
        let (n1, n2, n3, n4) = (n(1), n(2), n(3), n(4));
        if n1 == 0.0 || n2 == 0.0 || n3 == 0.0 {
            return if c == 0 { 0.0 } else { 0.75 };
        }
        let y = n1 / (n1 + 2.0 * n2);
        match c {
            0 => 0.0,
            1 => (1.0 - 2.0 * y * n2 / n1).clamp(0.0, 1.0),
            2 => (2.0 - 3.0 * y * n3 / n2).clamp(0.0, 2.0),
            _ => (3.0 - 4.0 * y * n4 / n3).clamp(0.0, 3.0),
        }
    }

    /// P(word | context) where `context` has exactly `order - 1` words.
    pub fn prob(&self, context: &[String], word: &str) -> f64 {
        assert_eq!(context.len(), self.order - 1);
        self.prob_k(self.order, context, word)
    }

    fn prob_k(&self, k: usize, context: &[String], word: &str) -> f64 {
        let counts = self.counts(k);
        let followers: Vec<(&String, u64)> = counts
            .iter()
            .filter(|(g, _)| g[..k - 1] == *context)
            .map(|(g, &c)| (&g[k - 1], c))
            .collect();
        let lower = if k == 1 {
            1.0 / self.predictable.len() as f64
        } else {
            self.prob_k(k - 1, &context[1..], word)
        };
        let total: u64 = followers.iter().map(|(_, c)| c).sum();
        if total == 0 {
            return lower;
        }
        let total = total as f64;
        let mut gamma = 0.0;
        let mut direct = 0.0;
        for (w, c) in &followers {
            let d = self.discount(k, *c);
            gamma += d;
            if w.as_str() == word {
                direct = (*c as f64 - d).max(0.0);
            }
        }
        direct / total + gamma / total * lower
    }
}
