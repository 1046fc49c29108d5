//! Retail transaction ingestion and the monthly feature pipeline.
//!
//! The response is the quantity sold. Base predictors are numeric fields and
//! dummy-coded categoricals derived from the invoice timestamp and product;
//! every pair of distinct base columns adds an interaction column. Each
//! calendar month is one epoch, and all epochs share the same columns.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike, Weekday};
use irs_core::EpochData;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Header names of the source columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub product: String,
    pub quantity: String,
    pub invoice_date: String,
    pub unit_price: String,
    pub customer_id: Option<String>,
    pub country: Option<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            product: "Description".into(),
            quantity: "Quantity".into(),
            invoice_date: "InvoiceDate".into(),
            unit_price: "UnitPrice".into(),
            customer_id: Some("CustomerID".into()),
            country: Some("Country".into()),
        }
    }
}

/// Timestamp layouts tried in order when no explicit format is given.
pub const DATE_FORMATS: [&str; 6] = [
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%Y-%m-%dT%H:%M:%S",
    "%m/%d/%Y %H:%M",
    "%m/%d/%Y %H:%M:%S",
    "%d.%m.%Y %H:%M",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Transaction {
    pub product: String,
    pub quantity: f64,
    pub invoice_date: NaiveDateTime,
    pub unit_price: f64,
    pub customer_id: Option<String>,
    pub country: Option<String>,
}

/// Parsed records and the number of rows dropped as unparseable.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedTransactions {
    pub records: Vec<Transaction>,
    pub dropped: usize,
}

fn parse_timestamp(s: &str, format: Option<&str>) -> Option<NaiveDateTime> {
    let s = s.trim();
    match format {
        Some(f) => NaiveDateTime::parse_from_str(s, f).ok(),
        None => DATE_FORMATS
            .iter()
            .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
            .or_else(|| {
                NaiveDate::parse_from_str(s, "%Y-%m-%d")
                    .ok()
                    .and_then(|d| d.and_hms_opt(0, 0, 0))
            }),
    }
}

/// Reads a transaction CSV with a header row. Rows whose timestamp, quantity
/// or unit price does not parse are dropped and counted.
pub fn load_transactions(
    path: &Path,
    map: &ColumnMap,
    date_format: Option<&str>,
) -> Result<LoadedTransactions> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| HarnessError::io(path, e))?;
    let headers = reader
        .headers()
        .map_err(|e| HarnessError::io(path, e))?
        .clone();
    if headers.is_empty() || headers.iter().all(|h| h.trim().is_empty()) {
        return Err(HarnessError::Data(format!("{}: empty file", path.display())));
    }
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| {
                HarnessError::Data(format!(
                    "{}: missing required column {name:?}",
                    path.display()
                ))
            })
    };
    let product = find(&map.product)?;
    let quantity = find(&map.quantity)?;
    let date = find(&map.invoice_date)?;
    let price = find(&map.unit_price)?;
    let customer = map.customer_id.as_deref().map(find).transpose()?;
    let country = map.country.as_deref().map(find).transpose()?;

    let mut records = Vec::new();
    let mut dropped = 0usize;
    for rec in reader.records() {
        let Ok(rec) = rec else {
            dropped += 1;
            continue;
        };
        let field = |i: usize| rec.get(i).map(str::trim);
        let parsed = (|| {
            Some(Transaction {
                product: field(product)?.to_string(),
                quantity: field(quantity)?.parse::<f64>().ok().filter(|v| v.is_finite())?,
                invoice_date: parse_timestamp(field(date)?, date_format)?,
                unit_price: field(price)?.parse::<f64>().ok().filter(|v| v.is_finite())?,
                customer_id: customer.and_then(field).filter(|s| !s.is_empty()).map(String::from),
                country: country.and_then(field).map(String::from),
            })
        })();
        match parsed {
            Some(t) => records.push(t),
            None => dropped += 1,
        }
    }
    if records.is_empty() && dropped == 0 {
        return Err(HarnessError::Data(format!("{}: empty file", path.display())));
    }
    Ok(LoadedTransactions { records, dropped })
}

/// Numeric predictors available to [`build_features`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumericField {
    UnitPrice,
}

/// Categorical predictors available to [`build_features`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoricalField {
    Product,
    /// Fixed levels Mon..Sun; Monday is the omitted level.
    DayOfWeek,
    /// Four 6-hour bins from midnight; the first bin is the omitted level.
    QuarterOfDay,
    Country,
    CustomerId,
}

/// Feature-pipeline settings; also the `--map` file of the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureSpec {
    pub columns: ColumnMap,
    pub date_format: Option<String>,
    /// Keep only transactions from this country.
    pub country: Option<String>,
    /// Keep only these products.
    pub products: Option<Vec<String>>,
    pub numeric: Vec<NumericField>,
    pub categorical: Vec<CategoricalField>,
    /// Omit the first level of data-derived categoricals (product, country,
    /// customer). Day-of-week and quarter-of-day always omit one level.
    pub drop_baseline_level: bool,
    /// Skip interactions between two dummies of the same categorical.
    pub skip_same_categorical_pairs: bool,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            columns: ColumnMap::default(),
            date_format: None,
            country: None,
            products: None,
            numeric: vec![NumericField::UnitPrice],
            categorical: vec![
                CategoricalField::Product,
                CategoricalField::DayOfWeek,
                CategoricalField::QuarterOfDay,
            ],
            drop_baseline_level: false,
            skip_same_categorical_pairs: false,
        }
    }
}

/// Monthly epochs with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub epochs: Vec<EpochData>,
    pub columns: Vec<String>,
    /// `YYYY-MM` label of each epoch.
    pub months: Vec<String>,
}

const WEEKDAYS: [Weekday; 7] = [
    Weekday::Mon,
    Weekday::Tue,
    Weekday::Wed,
    Weekday::Thu,
    Weekday::Fri,
    Weekday::Sat,
    Weekday::Sun,
];

/// Zero-based 6-hour bin of the timestamp.
pub fn quarter_of_day(ts: &NaiveDateTime) -> usize {
    (ts.hour() / 6) as usize
}

/// How one base column is computed from a record.
#[derive(Debug, Clone)]
enum BaseColumn {
    Numeric(NumericField),
    Dummy { field: CategoricalField, level: String },
}

/// Level label of a categorical, or `None` when the record lacks it.
fn level_of(t: &Transaction, field: CategoricalField) -> Option<String> {
    match field {
        CategoricalField::Product => Some(t.product.clone()),
        CategoricalField::DayOfWeek => Some(t.invoice_date.weekday().to_string()),
        CategoricalField::QuarterOfDay => Some(quarter_of_day(&t.invoice_date).to_string()),
        CategoricalField::Country => t.country.clone(),
        CategoricalField::CustomerId => t.customer_id.clone(),
    }
}

fn field_name(field: CategoricalField) -> &'static str {
    match field {
        CategoricalField::Product => "product",
        CategoricalField::DayOfWeek => "dow",
        CategoricalField::QuarterOfDay => "qod",
        CategoricalField::Country => "country",
        CategoricalField::CustomerId => "customer",
    }
}

impl BaseColumn {
    fn name(&self) -> String {
        match self {
            Self::Numeric(NumericField::UnitPrice) => "unit_price".into(),
            Self::Dummy { field, level } => format!("{}={level}", field_name(*field)),
        }
    }

    fn value(&self, t: &Transaction) -> f64 {
        match self {
            Self::Numeric(NumericField::UnitPrice) => t.unit_price,
            Self::Dummy { field, level } => {
                if level_of(t, *field).as_deref() == Some(level.as_str()) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn group(&self) -> Option<CategoricalField> {
        match self {
            Self::Numeric(_) => None,
            Self::Dummy { field, .. } => Some(*field),
        }
    }
}

/// Retained levels of a categorical over the whole dataset, so every epoch
/// gets the same columns.
fn retained_levels(
    records: &[Transaction],
    field: CategoricalField,
    drop_baseline: bool,
) -> Vec<String> {
    match field {
        CategoricalField::DayOfWeek => WEEKDAYS[1..].iter().map(|d| d.to_string()).collect(),
        CategoricalField::QuarterOfDay => (1..4).map(|q| q.to_string()).collect(),
        _ => {
            let levels: BTreeSet<String> =
                records.iter().filter_map(|t| level_of(t, field)).collect();
            let skip = usize::from(drop_baseline && !levels.is_empty());
            levels.into_iter().skip(skip).collect()
        }
    }
}

/// Builds the per-month design matrices. Column count and order are the same
/// for every epoch.
pub fn build_features(records: &[Transaction], spec: &FeatureSpec) -> Result<FeatureSet> {
    if records.is_empty() {
        return Err(HarnessError::Data("no transaction records".into()));
    }
    if spec.numeric.is_empty() && spec.categorical.is_empty() {
        return Err(HarnessError::Config("the feature spec lists no fields".into()));
    }
    for &field in &spec.categorical {
        let absent = match field {
            CategoricalField::Country => spec.columns.country.is_none(),
            CategoricalField::CustomerId => spec.columns.customer_id.is_none(),
            _ => false,
        };
        if absent {
            return Err(HarnessError::Config(format!(
                "field {:?} is not mapped to a source column",
                field_name(field)
            )));
        }
    }
    if spec.country.is_some() && spec.columns.country.is_none() {
        return Err(HarnessError::Config(
            "country filter given but no country column is mapped".into(),
        ));
    }
    let mut kept: Vec<&Transaction> = records
        .iter()
        .filter(|t| match &spec.country {
            Some(c) => t.country.as_deref() == Some(c.as_str()),
            None => true,
        })
        .collect();
    if let Some(products) = &spec.products {
        let present: BTreeSet<&str> = kept.iter().map(|t| t.product.as_str()).collect();
        if let Some(missing) = products.iter().find(|p| !present.contains(p.as_str())) {
            return Err(HarnessError::Config(format!(
                "product {missing:?} does not occur in the data"
            )));
        }
        let wanted: BTreeSet<&str> = products.iter().map(String::as_str).collect();
        kept.retain(|t| wanted.contains(t.product.as_str()));
    }
    if kept.is_empty() {
        return Err(HarnessError::Data("no records left after filtering".into()));
    }
    let kept: Vec<Transaction> = kept.into_iter().cloned().collect();

    let mut base: Vec<BaseColumn> = spec.numeric.iter().map(|&f| BaseColumn::Numeric(f)).collect();
    for &field in &spec.categorical {
        for level in retained_levels(&kept, field, spec.drop_baseline_level) {
            base.push(BaseColumn::Dummy { field, level });
        }
    }
    let mut pairs = Vec::new();
    for i in 0..base.len() {
        for j in (i + 1)..base.len() {
            let same = base[i].group().is_some() && base[i].group() == base[j].group();
            if !(same && spec.skip_same_categorical_pairs) {
                pairs.push((i, j));
            }
        }
    }
    let mut columns: Vec<String> = base.iter().map(BaseColumn::name).collect();
    columns.extend(
        pairs
            .iter()
            .map(|&(i, j)| format!("{}*{}", base[i].name(), base[j].name())),
    );

    let mut by_month: BTreeMap<(i32, u32), Vec<&Transaction>> = BTreeMap::new();
    for t in &kept {
        by_month
            .entry((t.invoice_date.year(), t.invoice_date.month()))
            .or_default()
            .push(t);
    }
    let p = columns.len();
    let mut epochs = Vec::with_capacity(by_month.len());
    let mut months = Vec::with_capacity(by_month.len());
    for (e, ((year, month), rows)) in by_month.into_iter().enumerate() {
        let n = rows.len();
        let mut x = DMatrix::zeros(n, p);
        for (r, t) in rows.iter().enumerate() {
            let vals: Vec<f64> = base.iter().map(|c| c.value(t)).collect();
            for (j, v) in vals.iter().enumerate() {
                x[(r, j)] = *v;
            }
            for (k, &(i, j)) in pairs.iter().enumerate() {
                x[(r, base.len() + k)] = vals[i] * vals[j];
            }
        }
        let y = DVector::from_iterator(n, rows.iter().map(|t| t.quantity));
        epochs.push(EpochData::new(x, y, e));
        months.push(format!("{year:04}-{month:02}"));
    }
    Ok(FeatureSet {
        epochs,
        columns,
        months,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(product: &str, ts: &str, qty: f64) -> Transaction {
        Transaction {
            product: product.into(),
            quantity: qty,
            invoice_date: parse_timestamp(ts, None).unwrap(),
            unit_price: 2.5,
            customer_id: None,
            country: Some("United Kingdom".into()),
        }
    }

    #[test]
    fn uk_retail_timestamp_layout() {
        let ts = parse_timestamp("12/1/2010 8:26", None).unwrap();
        assert_eq!((ts.year(), ts.month(), ts.day(), ts.hour()), (2010, 12, 1, 8));
        assert!(parse_timestamp("not-a-date", None).is_none());
    }

    #[test]
    fn quarter_bins() {
        let at = |h: u32| NaiveDate::from_ymd_opt(2011, 1, 1).unwrap().and_hms_opt(h, 0, 0).unwrap();
        let bins: Vec<usize> = [0, 5, 6, 11, 12, 18, 23].iter().map(|&h| quarter_of_day(&at(h))).collect();
        assert_eq!(bins, vec![0, 0, 1, 1, 2, 3, 3]);
    }

    #[test]
    fn single_record_is_one_epoch_with_one_row() {
        let fs = build_features(&[record("A", "2011-03-04 10:00:00", 6.0)], &FeatureSpec::default()).unwrap();
        assert_eq!(fs.epochs.len(), 1);
        assert_eq!(fs.epochs[0].n(), 1);
        assert_eq!(fs.months, vec!["2011-03"]);
    }

    #[test]
    fn absent_field_is_rejected() {
        let spec = FeatureSpec {
            columns: ColumnMap {
                customer_id: None,
                ..ColumnMap::default()
            },
            categorical: vec![CategoricalField::CustomerId],
            ..FeatureSpec::default()
        };
        let err = build_features(&[record("A", "2011-03-04 10:00:00", 6.0)], &spec).unwrap_err();
        assert!(matches!(err, HarnessError::Config(_)));
    }
}
