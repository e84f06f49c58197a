use std::io::{Read, Write};

use super::features::{DailyRow, FeatureDataset, Split};
use crate::error::{Error, Result};
use crate::{HOURS, NUM_FEATURES};

/// Per-column z-scoring fitted on training rows. Columns `0..151` are the
/// features and `151..175` the hourly targets. Population (divide by N)
/// standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(ds: &FeatureDataset) -> Result<Self> {
        let rows: Vec<&DailyRow> = ds.split_rows(Split::Train).collect();
        if rows.is_empty() {
            return Err(Error::Empty("training split"));
        }
        let n = rows.len() as f64;
        let width = NUM_FEATURES + HOURS;
        let value = |r: &DailyRow, j: usize| {
            if j < NUM_FEATURES {
                r.features[j]
            } else {
                r.targets[j - NUM_FEATURES]
            }
        };
        let mut means = vec![0.0; width];
        let mut stds = vec![0.0; width];
        for j in 0..width {
            let m = rows.iter().map(|r| value(r, j)).sum::<f64>() / n;
            let var = rows.iter().map(|r| (value(r, j) - m).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if !(sd > 1e-12 * m.abs().max(1.0)) {
                return Err(Error::ZeroVariance(j));
            }
            means[j] = m;
            stds[j] = sd;
        }
        Ok(Self { means, stds })
    }

    pub fn transform_row(&self, row: &DailyRow) -> DailyRow {
        let features = row
            .features
            .iter()
            .enumerate()
            .map(|(j, x)| (x - self.means[j]) / self.stds[j])
            .collect();
        let mut targets = [0.0; HOURS];
        for (h, t) in targets.iter_mut().enumerate() {
            *t = self.scale_target(h, row.targets[h]);
        }
        DailyRow {
            date: row.date,
            features,
            targets,
            split: row.split,
        }
    }

    pub fn inverse_row(&self, row: &DailyRow) -> DailyRow {
        let features = row
            .features
            .iter()
            .enumerate()
            .map(|(j, z)| z * self.stds[j] + self.means[j])
            .collect();
        let mut targets = [0.0; HOURS];
        for (h, t) in targets.iter_mut().enumerate() {
            *t = self.unscale_target(h, row.targets[h]);
        }
        DailyRow {
            date: row.date,
            features,
            targets,
            split: row.split,
        }
    }

    pub fn transform(&self, ds: &FeatureDataset) -> FeatureDataset {
        FeatureDataset {
            rows: ds.rows.iter().map(|r| self.transform_row(r)).collect(),
        }
    }

    pub fn scale_target(&self, hour: usize, price: f64) -> f64 {
        (price - self.means[NUM_FEATURES + hour]) / self.stds[NUM_FEATURES + hour]
    }

    pub fn unscale_target(&self, hour: usize, z: f64) -> f64 {
        z * self.stds[NUM_FEATURES + hour] + self.means[NUM_FEATURES + hour]
    }

    /// Standard deviation of the target column for `hour`.
    pub fn target_std(&self, hour: usize) -> f64 {
        self.stds[NUM_FEATURES + hour]
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["column", "mean", "std"])?;
        for j in 0..self.means.len() {
            wtr.write_record([j.to_string(), self.means[j].to_string(), self.stds[j].to_string()])?;
        }
        wtr.flush().map_err(|e| Error::io("<standardizer output>", e))?;
        Ok(())
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut means = Vec::new();
        let mut stds = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Invalid(format!("standardizer value `{s}`: {e}")))
            };
            means.push(parse(&rec[1])?);
            stds.push(parse(&rec[2])?);
        }
        if means.len() != NUM_FEATURES + HOURS {
            return Err(Error::Invalid(format!(
                "standardizer has {} columns, expected {}",
                means.len(),
                NUM_FEATURES + HOURS
            )));
        }
        Ok(Self { means, stds })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, NaiveDate};
    use proptest::prelude::*;

    fn row(i: usize, base: f64, split: Split) -> DailyRow {
        let date = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap() + Duration::days(i as i64);
        DailyRow {
            date,
            features: (0..NUM_FEATURES)
                .map(|j| base + (j as f64) * 0.1 + ((i * 7 + j) % 5) as f64)
                .collect(),
            targets: std::array::from_fn(|h| base * 2.0 + h as f64 + ((i * 3 + h) % 4) as f64),
            split: Some(split),
        }
    }

    fn dataset() -> FeatureDataset {
        FeatureDataset {
            rows: (0..20)
                .map(|i| row(i, i as f64, if i < 15 { Split::Train } else { Split::Test }))
                .collect(),
        }
    }

    #[test]
    fn two_point_column() {
        let mut ds = FeatureDataset {
            rows: vec![row(0, 0.0, Split::Train), row(1, 0.0, Split::Train)],
        };
        ds.rows[0].features[0] = 1.0;
        ds.rows[1].features[0] = 3.0;
        // keep every other column non-constant
        ds.rows[1].features.iter_mut().skip(1).for_each(|x| *x += 1.0);
        ds.rows[1].targets.iter_mut().for_each(|x| *x += 10.0);
        let st = Standardizer::fit(&ds).unwrap();
        assert_eq!(st.means[0], 2.0);
        assert_eq!(st.stds[0], 1.0);
    }

    #[test]
    fn constant_column_reports_index() {
        let mut ds = dataset();
        for r in &mut ds.rows {
            r.features[17] = 4.0;
        }
        assert!(matches!(Standardizer::fit(&ds), Err(Error::ZeroVariance(17))));
    }

    #[test]
    fn training_rows_only_and_unit_moments() {
        let ds = dataset();
        let st = Standardizer::fit(&ds).unwrap();
        let z = st.transform(&ds);
        let train: Vec<_> = z.split_rows(Split::Train).collect();
        let n = train.len() as f64;
        for j in 0..NUM_FEATURES {
            let m = train.iter().map(|r| r.features[j]).sum::<f64>() / n;
            let v = train.iter().map(|r| (r.features[j] - m).powi(2)).sum::<f64>() / n;
            assert!(m.abs() < 1e-8);
            assert!((v.sqrt() - 1.0).abs() < 1e-8);
        }
        // test rows are shifted and so do not have zero mean
        let test_mean = z.split_rows(Split::Test).map(|r| r.features[0]).sum::<f64>() / 5.0;
        assert!(test_mean > 1.0);
    }

    #[test]
    fn csv_round_trip() {
        let st = Standardizer::fit(&dataset()).unwrap();
        let mut buf = Vec::new();
        st.write(&mut buf).unwrap();
        assert_eq!(Standardizer::read(buf.as_slice()).unwrap(), st);
    }

    proptest! {
        #[test]
        fn inverse_round_trip(shift in -1e3f64..1e3, scale in 0.01f64..100.0) {
            let ds = dataset();
            let st = Standardizer::fit(&ds).unwrap();
            let mut r = row(3, 1.0, Split::Test);
            r.features.iter_mut().for_each(|x| *x = *x * scale + shift);
            let back = st.inverse_row(&st.transform_row(&r));
            for (a, b) in back.features.iter().zip(&r.features) {
                prop_assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
            }
            for (a, b) in back.targets.iter().zip(&r.targets) {
                prop_assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
            }
        }
    }
}
