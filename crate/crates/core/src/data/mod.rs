//! Market data ingestion and the daily design matrix.
//!
//! Raw input is one CSV record per delivery hour in market local time. The
//! pipeline is `ingest_csv` -> `normalize_clock` -> `build_features` ->
//! `split_by_dates` -> `Standardizer`.

mod clock;
mod features;
mod ingest;
mod standardize;

pub use clock::{normalize_clock, DstRule};
pub use features::{
    build_features, read_dataset, write_dataset, DailyRow, FeatureDataset, Split, SplitRanges,
    DateRange, FEATURE_LAGS,
};
pub use ingest::{ingest_csv, ingest_reader, write_series, ColumnSchema, HourlyRecord, MarketSeries};
pub use standardize::Standardizer;
