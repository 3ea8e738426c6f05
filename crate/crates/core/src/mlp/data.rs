//! Vertically partitioned datasets: each provider holds a block of feature
//! columns, one of them also holds the labels.

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::runtime::Session;
use crate::sharing::{share, AdditiveShare, PartyId};
use crate::tensor::Matrix;

const IRIS_CSV: &str = include_str!("../../data/iris.csv");
const WINE_CSV: &str = include_str!("../../data/wine.csv");

pub const LABEL_COLUMN: &str = "label";

/// One provider's columns. `labels` is present only at the label provider.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderBlock {
    pub columns: Vec<String>,
    /// `rows x columns.len()`; `None` when the provider holds no features.
    pub features: Option<Matrix>,
    pub labels: Option<Vec<usize>>,
    pub rows: usize,
}

impl ProviderBlock {
    /// Parses a CSV block with a header row. A column named `label` holds
    /// integer class indices in `[0, classes)`; all other cells must be
    /// numeric.
    pub fn from_csv_reader(reader: impl Read, origin: &str, classes: usize) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let headers = rdr
            .headers()
            .map_err(|e| parse_err(1, e.to_string()))?
            .clone();
        let label_idx = headers.iter().position(|h| h == LABEL_COLUMN);
        let columns: Vec<String> = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != label_idx)
            .map(|(_, h)| h.to_string())
            .collect();

        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut rows = 0;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                parse_err(line, e.to_string())
            })?;
            let line = rec
                .position()
                .map(|p| p.line() as usize)
                .unwrap_or(rows + 2);
            if rec.len() != headers.len() {
                return Err(parse_err(
                    line,
                    format!("expected {} cells, found {}", headers.len(), rec.len()),
                ));
            }
            for (i, cell) in rec.iter().enumerate() {
                if Some(i) == label_idx {
                    let lab: usize = cell.parse().map_err(|_| {
                        parse_err(line, format!("label {cell:?} is not a class index"))
                    })?;
                    if lab >= classes {
                        return Err(parse_err(
                            line,
                            format!("unknown label {lab}; expected 0..{classes}"),
                        ));
                    }
                    labels.push(lab);
                } else {
                    let v: f64 = cell.parse().map_err(|_| {
                        parse_err(
                            line,
                            format!("non-numeric cell {cell:?} in column {:?}", &headers[i]),
                        )
                    })?;
                    if !v.is_finite() {
                        return Err(parse_err(line, format!("non-finite cell {cell:?}")));
                    }
                    data.push(v);
                }
            }
            rows += 1;
        }
        if rows == 0 {
            return Err(parse_err(2, "no data rows".into()));
        }
        let features = if columns.is_empty() {
            None
        } else {
            Some(Matrix::new(rows, columns.len(), data)?)
        };
        Ok(Self {
            columns,
            features,
            labels: label_idx.map(|_| labels),
            rows,
        })
    }

    pub fn from_csv(path: &Path, classes: usize) -> Result<Self> {
        let f = std::fs::File::open(path)
            .map_err(|e| Error::Io(e).context(path.display().to_string()))?;
        Self::from_csv_reader(f, &path.display().to_string(), classes)
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    /// Per-column z-score computed on this block alone. Constant columns
    /// are centred only.
    pub fn standardized(&self) -> Self {
        let mut out = self.clone();
        if let Some(m) = out.features.as_mut() {
            let n = m.rows() as f64;
            for c in 0..m.cols() {
                let mean = (0..m.rows()).map(|r| m.get(r, c)).sum::<f64>() / n;
                let var = (0..m.rows())
                    .map(|r| (m.get(r, c) - mean).powi(2))
                    .sum::<f64>()
                    / n;
                let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
                for r in 0..m.rows() {
                    let v = m.get(r, c);
                    m.set(r, c, (v - mean) / sd);
                }
            }
        }
        out
    }
}

/// Full plaintext dataset, used to cut provider blocks and by the
/// plaintext reference trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn builtin(name: &str) -> Result<Self> {
        let (csv, classes) = match name {
            "iris" => (IRIS_CSV, 3),
            "wine" => (WINE_CSV, 3),
            other => {
                return Err(Error::Config(format!(
                    "unknown dataset {other:?}; expected iris or wine"
                )))
            }
        };
        let block = ProviderBlock::from_csv_reader(csv.as_bytes(), name, classes)?;
        Ok(Self {
            name: name.to_string(),
            features: block
                .features
                .ok_or_else(|| Error::Format("dataset has no features".into()))?,
            labels: block
                .labels
                .ok_or_else(|| Error::Format("dataset has no labels".into()))?,
            classes,
        })
    }

    pub fn rows(&self) -> usize {
        self.features.rows()
    }

    /// Cuts the columns into three consecutive blocks of the given widths;
    /// `label_provider` also gets the labels.
    pub fn split_vertical(
        &self,
        widths: [usize; 3],
        label_provider: PartyId,
    ) -> Result<[ProviderBlock; 3]> {
        if widths.iter().sum::<usize>() != self.features.cols() {
            return Err(Error::Config(format!(
                "block widths {widths:?} do not cover {} features",
                self.features.cols()
            )));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(3);
        for (i, &w) in widths.iter().enumerate() {
            let features = if w == 0 {
                None
            } else {
                Some(self.features.column_slice(start, start + w)?)
            };
            out.push(ProviderBlock {
                columns: (start..start + w).map(|c| format!("f{c}")).collect(),
                features,
                labels: (i == label_provider.index()).then(|| self.labels.clone()),
                rows: self.rows(),
            });
            start += w;
        }
        Ok(out.try_into().expect("three blocks"))
    }
}

/// Public facts every party needs about the partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerticalLayout {
    pub rows: usize,
    pub widths: [usize; 3],
    pub classes: usize,
    pub label_provider: PartyId,
}

impl VerticalLayout {
    pub fn features(&self) -> usize {
        self.widths.iter().sum()
    }
}

/// Features and one-hot labels as sharings.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedData {
    pub features: AdditiveShare,
    pub labels: AdditiveShare,
}

pub fn one_hot(labels: &[usize], classes: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(labels.len(), classes);
    for (r, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Domain(format!(
                "label {l} out of range for {classes} classes"
            )));
        }
        m.set(r, l, 1.0);
    }
    Ok(m)
}

/// Every provider shares its block; the blocks are concatenated column-wise
/// in party order and the label provider shares one-hot labels. `own` is
/// this party's block (ignored where the layout says it is empty).
pub fn ingest_vertical(
    sess: &mut Session,
    layout: &VerticalLayout,
    own: Option<&ProviderBlock>,
) -> Result<SharedData> {
    let me = sess.id();
    if let Some(b) = own {
        if b.rows != layout.rows {
            return Err(Error::Config(format!(
                "{me} block has {} rows, layout says {}",
                b.rows, layout.rows
            )));
        }
        if b.width() != layout.widths[me.index()] {
            return Err(Error::Config(format!(
                "{me} block has {} columns, layout says {}",
                b.width(),
                layout.widths[me.index()]
            )));
        }
    }
    if layout.features() == 0 {
        return Err(Error::Config("layout has no feature columns".into()));
    }

    let mut blocks = Vec::new();
    for p in PartyId::ALL {
        let w = layout.widths[p.index()];
        if w == 0 {
            continue;
        }
        let input = if p == me {
            Some(
                own.and_then(|b| b.features.as_ref())
                    .ok_or_else(|| Error::Config(format!("{me} must supply its feature block")))?,
            )
        } else {
            None
        };
        blocks.push(share(sess, p, input, (layout.rows, w))?);
    }
    let refs: Vec<&AdditiveShare> = blocks.iter().collect();
    let features = AdditiveShare::hcat(&refs)?;

    let label_matrix = if me == layout.label_provider {
        let labels = own.and_then(|b| b.labels.as_ref()).ok_or_else(|| {
            Error::Config(format!("{me} is the label provider but has no labels"))
        })?;
        Some(one_hot(labels, layout.classes)?)
    } else {
        None
    };
    let labels = share(
        sess,
        layout.label_provider,
        label_matrix.as_ref(),
        (layout.rows, layout.classes),
    )?;
    Ok(SharedData { features, labels })
}

/// Public train/test partition of row indices.
pub fn split_indices(
    rows: usize,
    train_size: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if train_size == 0 || train_size >= rows {
        return Err(Error::Config(format!(
            "train size {train_size} must be in 1..{rows}"
        )));
    }
    let mut idx: Vec<usize> = (0..rows).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(train_size);
    Ok((idx, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_shapes() {
        let iris = Dataset::builtin("iris").unwrap();
        assert_eq!(iris.features.shape(), (150, 4));
        let wine = Dataset::builtin("wine").unwrap();
        assert_eq!(wine.features.shape(), (178, 13));
        assert_eq!(wine.labels.iter().filter(|&&l| l == 2).count(), 48);
        assert!(Dataset::builtin("mnist").is_err());
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let bad = "a,b,label\n1,2,0\n3,x,1\n";
        match ProviderBlock::from_csv_reader(bad.as_bytes(), "blk.csv", 3).unwrap_err() {
            Error::Parse { path, line, msg } => {
                assert_eq!(path, "blk.csv");
                assert_eq!(line, 3);
                assert!(msg.contains("non-numeric"), "{msg}");
            }
            e => panic!("{e}"),
        }
        let bad_label = "a,label\n1,0\n2,7\n";
        let err = ProviderBlock::from_csv_reader(bad_label.as_bytes(), "l.csv", 3).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let ragged = "a,b\n1,2\n3\n";
        assert!(ProviderBlock::from_csv_reader(ragged.as_bytes(), "r.csv", 3).is_err());
    }

    #[test]
    fn label_only_block() {
        let b = ProviderBlock::from_csv_reader("label\n0\n2\n".as_bytes(), "x", 3).unwrap();
        assert_eq!(b.width(), 0);
        assert!(b.features.is_none());
        assert_eq!(b.labels, Some(vec![0, 2]));
    }

    #[test]
    fn standardized_columns_have_zero_mean_unit_variance() {
        let iris = Dataset::builtin("iris").unwrap();
        let [b, _, _] = iris.split_vertical([2, 1, 1], PartyId::P0).unwrap();
        let s = b.standardized();
        let m = s.features.unwrap();
        for c in 0..2 {
            let col: Vec<f64> = (0..150).map(|r| m.get(r, c)).collect();
            let mean = col.iter().sum::<f64>() / 150.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 150.0;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn split_is_a_partition() {
        let (tr, te) = split_indices(178, 142, 4).unwrap();
        assert_eq!((tr.len(), te.len()), (142, 36));
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort();
        assert_eq!(all, (0..178).collect::<Vec<_>>());
        assert_eq!(split_indices(178, 142, 4).unwrap().0, tr);
        assert!(split_indices(10, 10, 0).is_err());
    }

    #[test]
    fn one_hot_rows_sum_to_one() {
        let m = one_hot(&[2, 0, 1], 3).unwrap();
        for r in 0..3 {
            assert_eq!(m.row(r).iter().sum::<f64>(), 1.0);
        }
        assert!(one_hot(&[3], 3).is_err());
    }
}
