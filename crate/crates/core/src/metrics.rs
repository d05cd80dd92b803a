//! Confusion-matrix statistics. Rows are the true class, columns the
//! predicted class; recall is a row statistic and precision a column one.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Exact count ratio `num / den` with `den > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Percentage with one decimal, rounded half up, e.g. `"72.3%"`.
    pub fn percent(self) -> String {
        // tenths of a percent = floor(1000 num / den + 1/2)
        let tenths = (2000 * u128::from(self.num) + u128::from(self.den)) / (2 * u128::from(self.den));
        format!("{}.{}%", tenths / 10, tenths % 10)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stat {
    Precision,
    Recall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Mean,
    Min,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    /// Builds a matrix from `k` rows of `k` counts.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != k) {
            return Err(Error::InvalidArgument(format!(
                "confusion row has {} entries, expected {k}",
                r.len()
            )));
        }
        Ok(ConfusionMatrix {
            k,
            counts: rows.concat(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        (0..self.k).map(|p| self.get(c, p)).sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, c)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|c| self.get(c, c)).sum()
    }

    pub fn accuracy_ratio(&self) -> Result<Ratio> {
        match self.total() {
            0 => Err(Error::Undefined("accuracy of an empty confusion matrix".into())),
            den => Ok(Ratio {
                num: self.trace(),
                den,
            }),
        }
    }

    pub fn accuracy(&self) -> Result<f64> {
        self.accuracy_ratio().map(Ratio::value)
    }

    pub fn ratio(&self, class: usize, stat: Stat) -> Result<Ratio> {
        if class >= self.k {
            return Err(Error::InvalidArgument(format!(
                "class {class} outside a {}-class matrix",
                self.k
            )));
        }
        let (den, kind) = match stat {
            Stat::Recall => (self.row_sum(class), "recall"),
            Stat::Precision => (self.col_sum(class), "precision"),
        };
        if den == 0 {
            return Err(Error::UndefinedForClass { kind, class });
        }
        Ok(Ratio {
            num: self.get(class, class),
            den,
        })
    }

    pub fn recall(&self, class: usize) -> Result<f64> {
        self.ratio(class, Stat::Recall).map(Ratio::value)
    }

    pub fn precision(&self, class: usize) -> Result<f64> {
        self.ratio(class, Stat::Precision).map(Ratio::value)
    }

    /// Mean or minimum of `stat` over `subset`.
    pub fn key_class_aggregate(&self, subset: &[usize], stat: Stat, reduce: Reduce) -> Result<f64> {
        if subset.is_empty() {
            return Err(Error::InvalidArgument("empty class subset".into()));
        }
        let values = subset
            .iter()
            .map(|&c| self.ratio(c, stat).map(Ratio::value))
            .collect::<Result<Vec<_>>>()?;
        Ok(match reduce {
            Reduce::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Reduce::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
        })
    }

    /// Relabels classes: class `c` becomes `perm[c]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.k];
        if perm.len() != self.k || perm.iter().any(|&p| p >= self.k || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidArgument("not a permutation of the classes".into()));
        }
        let mut out = ConfusionMatrix::zeros(self.k);
        for t in 0..self.k {
            for p in 0..self.k {
                out.counts[perm[t] * self.k + perm[p]] = self.get(t, p);
            }
        }
        Ok(out)
    }

    fn labels(&self, names: &[String]) -> Vec<String> {
        (0..self.k)
            .map(|c| names.get(c).cloned().unwrap_or_else(|| format!("c{c}")))
            .collect()
    }

    fn cell(r: Result<Ratio>) -> String {
        r.map_or_else(|_| "n/a".to_string(), Ratio::percent)
    }

    /// CSV with one row per true class and a trailing recall column, then a
    /// precision row whose last cell is the overall accuracy.
    pub fn to_csv(&self, names: &[String]) -> String {
        let labels = self.labels(names);
        let mut s = String::from("true\\pred");
        for l in &labels {
            s.push(',');
            s.push_str(l);
        }
        s.push_str(",recall\n");
        for (t, l) in labels.iter().enumerate() {
            s.push_str(l);
            for p in 0..self.k {
                let _ = write!(s, ",{}", self.get(t, p));
            }
            let _ = writeln!(s, ",{}", Self::cell(self.ratio(t, Stat::Recall)));
        }
        s.push_str("precision");
        for c in 0..self.k {
            let _ = write!(s, ",{}", Self::cell(self.ratio(c, Stat::Precision)));
        }
        let _ = writeln!(s, ",{}", Self::cell(self.accuracy_ratio()));
        s
    }

    /// Fixed-width table: row label, counts, row recall and its complement,
    /// then precision and complement footers.
    pub fn to_table(&self, names: &[String]) -> String {
        let labels = self.labels(names);
        let lw = labels.iter().map(String::len).max().unwrap_or(0).max(9);
        let cw = labels
            .iter()
            .map(String::len)
            .chain(self.counts.iter().map(|c| c.to_string().len()))
            .max()
            .unwrap_or(0)
            .max(6);
        let complement = |r: Result<Ratio>| {
            Self::cell(r.map(|r| Ratio {
                num: r.den - r.num,
                den: r.den,
            }))
        };
        let mut s = format!("{:lw$}", "");
        for l in &labels {
            let _ = write!(s, " {l:>cw$}");
        }
        s.push('\n');
        for (t, l) in labels.iter().enumerate() {
            let _ = write!(s, "{l:<lw$}");
            for p in 0..self.k {
                match self.get(t, p) {
                    0 => {
                        let _ = write!(s, " {:>cw$}", "");
                    }
                    n => {
                        let _ = write!(s, " {n:>cw$}");
                    }
                }
            }
            let r = || self.ratio(t, Stat::Recall);
            let _ = writeln!(s, " {:>cw$} {:>cw$}", Self::cell(r()), complement(r()));
        }
        for (label, f) in [("precision", false), ("error", true)] {
            let _ = write!(s, "{label:<lw$}");
            for c in 0..self.k {
                let r = self.ratio(c, Stat::Precision);
                let v = if f { complement(r) } else { Self::cell(r) };
                let _ = write!(s, " {v:>cw$}");
            }
            s.push('\n');
        }
        let _ = writeln!(s, "accuracy {}", Self::cell(self.accuracy_ratio()));
        s
    }
}

/// Counts `(truth, prediction)` pairs into a `k`-class matrix.
pub fn confusion(truth: &[usize], pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels but {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= k || p >= k {
            return Err(Error::InvalidArgument(format!(
                "label pair ({t}, {p}) outside [0, {k})"
            )));
        }
        cm.counts[t * k + p] += 1;
    }
    Ok(cm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio as Q;
    use proptest::prelude::*;

    #[test]
    fn hand_counted_example() {
        let cm = confusion(&[0, 0, 1], &[0, 1, 1], 2).unwrap();
        assert_eq!(cm, ConfusionMatrix::from_rows(&[vec![1, 1], vec![0, 1]]).unwrap());
    }

    #[test]
    fn perfect_and_empty() {
        let cm = confusion(&[0, 1, 2, 2], &[0, 1, 2, 2], 3).unwrap();
        assert_eq!(cm.trace(), cm.total());
        assert_eq!(cm.accuracy().unwrap(), 1.0);
        let empty = confusion(&[], &[], 3).unwrap();
        assert_eq!(empty, ConfusionMatrix::zeros(3));
        assert!(matches!(empty.accuracy(), Err(Error::Undefined(_))));
    }

    #[test]
    fn out_of_range_label() {
        assert!(matches!(confusion(&[0, 3], &[0, 1], 3), Err(Error::InvalidArgument(_))));
        assert!(confusion(&[0], &[0, 1], 3).is_err());
    }

    #[test]
    fn symmetric_half() {
        let cm = ConfusionMatrix::from_rows(&[vec![1, 1], vec![1, 1]]).unwrap();
        assert_eq!(cm.accuracy().unwrap(), 0.5);
    }

    #[test]
    fn zero_denominator_is_an_error_not_zero() {
        let cm = ConfusionMatrix::from_rows(&[vec![2, 0], vec![0, 0]]).unwrap();
        assert!(matches!(
            cm.recall(1),
            Err(Error::UndefinedForClass { kind: "recall", class: 1 })
        ));
        assert!(matches!(
            cm.precision(1),
            Err(Error::UndefinedForClass { kind: "precision", class: 1 })
        ));
        assert!(cm.key_class_aggregate(&[0, 1], Stat::Recall, Reduce::Mean).is_err());
    }

    #[test]
    fn aggregates() {
        let cm = ConfusionMatrix::from_rows(&[vec![1, 1], vec![0, 3]]).unwrap();
        assert_eq!(
            cm.key_class_aggregate(&[0], Stat::Recall, Reduce::Mean).unwrap(),
            cm.recall(0).unwrap()
        );
        assert_eq!(cm.key_class_aggregate(&[0, 1], Stat::Recall, Reduce::Mean).unwrap(), 0.75);
        assert_eq!(cm.key_class_aggregate(&[0, 1], Stat::Recall, Reduce::Min).unwrap(), 0.5);
        assert!(cm.key_class_aggregate(&[], Stat::Recall, Reduce::Min).is_err());
    }

    #[test]
    fn percent_rounds_half_up() {
        assert_eq!(Ratio { num: 1, den: 8 }.percent(), "12.5%");
        assert_eq!(Ratio { num: 1, den: 16 }.percent(), "6.3%");
        assert_eq!(Ratio { num: 1, den: 3 }.percent(), "33.3%");
        assert_eq!(Ratio { num: 2, den: 3 }.percent(), "66.7%");
        assert_eq!(Ratio { num: 1, den: 1 }.percent(), "100.0%");
        assert_eq!(Ratio { num: 0, den: 5 }.percent(), "0.0%");
    }

    #[test]
    fn csv_and_table_layout() {
        let cm = ConfusionMatrix::from_rows(&[vec![1, 1], vec![0, 0]]).unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        assert_eq!(
            cm.to_csv(&names),
            "true\\pred,a,b,recall\na,1,1,50.0%\nb,0,0,n/a\nprecision,100.0%,0.0%,50.0%\n"
        );
        let t = cm.to_table(&names);
        assert!(t.lines().nth(1).unwrap().ends_with("50.0%  50.0%"));
        assert!(t.contains("accuracy 50.0%"));
    }

    fn arb_labels() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        (1usize..6).prop_flat_map(|k| (Just(k), prop::collection::vec((0..k, 0..k), 0..80)))
    }

    proptest! {
        #[test]
        fn micro_consistency_in_rationals((k, pairs) in arb_labels()) {
            let (t, p): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let cm = confusion(&t, &p, k).unwrap();
            prop_assume!(cm.total() > 0);
            let mut sum = Q::from_integer(0u64);
            for c in 0..k {
                if let Ok(r) = cm.ratio(c, Stat::Recall) {
                    sum += Q::new(r.num, r.den) * Q::from_integer(cm.row_sum(c));
                }
            }
            let acc = cm.accuracy_ratio().unwrap();
            prop_assert_eq!(sum / Q::from_integer(cm.total()), Q::new(acc.num, acc.den));
        }

        #[test]
        fn permutation_equivariant((k, pairs) in arb_labels(), seed in any::<u64>()) {
            let mut perm: Vec<usize> = (0..k).collect();
            let mut s = seed;
            for i in (1..k).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (s >> 33) as usize % (i + 1));
            }
            let (t, p): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let cm = confusion(&t, &p, k).unwrap();
            let tp: Vec<_> = t.iter().map(|&c| perm[c]).collect();
            let pp: Vec<_> = p.iter().map(|&c| perm[c]).collect();
            prop_assert_eq!(confusion(&tp, &pp, k).unwrap(), cm.permuted(&perm).unwrap());
        }

        #[test]
        fn stats_in_unit_interval((k, pairs) in arb_labels()) {
            let (t, p): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let cm = confusion(&t, &p, k).unwrap();
            for c in 0..k {
                for stat in [Stat::Recall, Stat::Precision] {
                    if let Ok(r) = cm.ratio(c, stat) {
                        prop_assert!((0.0..=1.0).contains(&r.value()));
                    }
                }
            }
        }
    }
}
