use std::collections::HashMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Domain, EncodedSample, FeatureSchema, Interaction, Side, ValueDictionary};
use crate::error::{Error, Result, RowError};

fn default_delimiter() -> String {
    "\t".into()
}

fn default_error_fraction() -> f64 {
    0.01
}

/// One delimiter-separated input table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub path: PathBuf,
    #[serde(default = "default_delimiter")]
    pub delimiter: String,
    /// First line holds column names.
    #[serde(default)]
    pub header: bool,
    /// Column names, required when `header` is false.
    #[serde(default)]
    pub columns: Vec<String>,
    /// Join key column for user/item side tables.
    #[serde(default)]
    pub key: Option<String>,
}

/// Pre-binning transformation of a raw column value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extract {
    /// Keep the first `n` characters.
    Prefix(usize),
    /// Parse the trailing four characters as a year.
    Year,
}

/// Strictly increasing bin edges; value `x` lands in bin `#{e : e <= x}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BinSpec(pub Vec<f64>);

impl BinSpec {
    pub fn validate(&self, domain: &str) -> Result<()> {
        if self.0.iter().any(|e| !e.is_finite()) {
            return Err(Error::Config(format!("bin edges of {domain:?} must be finite")));
        }
        if self.0.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "bin edges of {domain:?} must be strictly increasing"
            )));
        }
        Ok(())
    }

    pub fn bin(&self, x: f64) -> usize {
        self.0.partition_point(|&e| e <= x)
    }

    pub fn n_bins(&self) -> usize {
        self.0.len() + 1
    }

    pub fn label(&self, bin: usize) -> String {
        let e = &self.0;
        if e.is_empty() {
            "all".into()
        } else if bin == 0 {
            format!("<{}", e[0])
        } else if bin == e.len() {
            format!(">={}", e[bin - 1])
        } else {
            format!("[{},{})", e[bin - 1], e[bin])
        }
    }
}

/// How one feature domain is read from the joined row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub side: Side,
    #[serde(default)]
    pub column: Option<String>,
    /// Multi-hot flag columns; the token is the name of the first column set to "1".
    #[serde(default)]
    pub first_flag_of: Vec<String>,
    #[serde(default)]
    pub extract: Option<Extract>,
    #[serde(default)]
    pub bins: Option<BinSpec>,
    /// Token used for empty raw values; without it an empty value is a row error.
    #[serde(default)]
    pub missing_token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSpec {
    pub interactions: TableSpec,
    #[serde(default)]
    pub user_table: Option<TableSpec>,
    #[serde(default)]
    pub item_table: Option<TableSpec>,
    pub user_column: String,
    pub item_column: String,
    #[serde(default)]
    pub timestamp_column: Option<String>,
    pub user_id_domain: String,
    pub item_id_domain: String,
    pub domains: Vec<DomainSpec>,
    #[serde(default = "default_error_fraction")]
    pub max_error_fraction: f64,
    #[serde(default)]
    pub min_user_interactions: Option<usize>,
    #[serde(default)]
    pub max_user_interactions: Option<usize>,
}

impl IngestSpec {
    pub fn validate(&self) -> Result<()> {
        if self.domains.is_empty() {
            return Err(Error::Config("no feature domains configured".into()));
        }
        for d in &self.domains {
            match (&d.column, d.first_flag_of.is_empty()) {
                (Some(_), true) | (None, false) => {}
                _ => {
                    return Err(Error::Config(format!(
                        "domain {:?} needs exactly one of `column` or `first_flag_of`",
                        d.name
                    )))
                }
            }
            if let Some(b) = &d.bins {
                b.validate(&d.name)?;
            }
        }
        for name in [&self.user_id_domain, &self.item_id_domain] {
            if !self.domains.iter().any(|d| &d.name == name) {
                return Err(Error::Config(format!("id domain {name:?} is not configured")));
            }
        }
        if !(0.0..=1.0).contains(&self.max_error_fraction) {
            return Err(Error::Config("max_error_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Input file paths, for fingerprinting.
    pub fn paths(&self) -> Vec<&Path> {
        let mut v = vec![self.interactions.path.as_path()];
        v.extend(self.user_table.iter().map(|t| t.path.as_path()));
        v.extend(self.item_table.iter().map(|t| t.path.as_path()));
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub line: usize,
    pub fields: Vec<String>,
}

/// A parsed delimiter-separated table.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub columns: Vec<String>,
    pub rows: Vec<RawRow>,
}

impl RawTable {
    pub fn parse<R: Read>(reader: R, spec: &TableSpec) -> Result<Self> {
        let delim = match spec.delimiter.as_bytes() {
            [b] => *b,
            _ => {
                return Err(Error::Config(format!(
                    "delimiter {:?} must be a single byte",
                    spec.delimiter
                )))
            }
        };
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delim)
            .has_headers(false)
            .flexible(true)
            .quoting(false)
            .from_reader(reader);
        let mut columns = spec.columns.clone();
        let mut rows = Vec::new();
        let mut record = csv::ByteRecord::new();
        let mut line = 0usize;
        loop {
            match rdr.read_byte_record(&mut record) {
                Ok(false) => break,
                Ok(true) => {}
                Err(e) => return Err(Error::Data(format!("{}: {e}", spec.path.display()))),
            }
            line += 1;
            let fields: Vec<String> = record
                .iter()
                .map(|f| String::from_utf8_lossy(f).trim().to_owned())
                .collect();
            if spec.header && line == 1 {
                columns = fields;
                continue;
            }
            if fields.len() == 1 && fields[0].is_empty() {
                continue;
            }
            rows.push(RawRow { line, fields });
        }
        if columns.is_empty() {
            return Err(Error::Config(format!(
                "{}: no header and no `columns` configured",
                spec.path.display()
            )));
        }
        Ok(Self { columns, rows })
    }

    pub fn from_str(text: &str, spec: &TableSpec) -> Result<Self> {
        Self::parse(text.as_bytes(), spec)
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawTables {
    pub interactions: RawTable,
    pub users: Option<RawTable>,
    pub items: Option<RawTable>,
}

/// Read every table named in `spec`.
pub fn load_tables(spec: &IngestSpec) -> Result<RawTables> {
    let read = |t: &TableSpec| -> Result<RawTable> {
        let f = std::fs::File::open(&t.path).map_err(|e| Error::file(&t.path, e))?;
        RawTable::parse(std::io::BufReader::new(f), t)
    };
    Ok(RawTables {
        interactions: read(&spec.interactions)?,
        users: spec.user_table.as_ref().map(read).transpose()?,
        items: spec.item_table.as_ref().map(read).transpose()?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutput {
    pub schema: FeatureSchema,
    pub dictionaries: Vec<ValueDictionary>,
    pub interactions: Vec<Interaction>,
    pub row_errors: Vec<RowError>,
    pub rows_read: usize,
}

#[derive(Debug, Clone, Copy)]
enum Source {
    Interactions,
    Users,
    Items,
}

#[derive(Debug, Clone, Copy)]
struct ColumnRef {
    source: Source,
    index: usize,
}

struct Joined<'a> {
    tables: &'a RawTables,
    user_index: HashMap<&'a str, usize>,
    item_index: HashMap<&'a str, usize>,
}

impl<'a> Joined<'a> {
    fn new(tables: &'a RawTables, spec: &IngestSpec) -> Result<Self> {
        let index = |table: &'a Option<RawTable>, ts: &Option<TableSpec>, what: &str| {
            let mut map = HashMap::new();
            if let (Some(t), Some(ts)) = (table, ts) {
                let key = ts
                    .key
                    .as_deref()
                    .ok_or_else(|| Error::Config(format!("{what} table needs a `key` column")))?;
                let k = t
                    .column(key)
                    .ok_or_else(|| Error::Schema(format!("{what} table has no column {key:?}")))?;
                for (r, row) in t.rows.iter().enumerate() {
                    if let Some(v) = row.fields.get(k) {
                        map.entry(v.as_str()).or_insert(r);
                    }
                }
            }
            Ok::<_, Error>(map)
        };
        Ok(Self {
            tables,
            user_index: index(&tables.users, &spec.user_table, "user")?,
            item_index: index(&tables.items, &spec.item_table, "item")?,
        })
    }

    fn resolve(&self, name: &str) -> Option<ColumnRef> {
        if let Some(index) = self.tables.interactions.column(name) {
            return Some(ColumnRef {
                source: Source::Interactions,
                index,
            });
        }
        if let Some(index) = self.tables.users.as_ref().and_then(|t| t.column(name)) {
            return Some(ColumnRef {
                source: Source::Users,
                index,
            });
        }
        if let Some(index) = self.tables.items.as_ref().and_then(|t| t.column(name)) {
            return Some(ColumnRef {
                source: Source::Items,
                index,
            });
        }
        None
    }
}

enum DomainSource {
    Column(ColumnRef),
    FirstFlag(Vec<(String, ColumnRef)>),
}

struct ParsedRow {
    tokens: Vec<String>,
    order_key: i64,
}

fn require(joined: &Joined<'_>, name: &str) -> Result<ColumnRef> {
    joined
        .resolve(name)
        .ok_or_else(|| Error::Schema(format!("missing required column {name:?}")))
}

/// Encode raw tables into positive samples.
///
/// Dictionaries are built over the full (filtered) table, in row order.
/// Binned domains reserve one index per bin, in bin order.
pub fn ingest(tables: &RawTables, spec: &IngestSpec) -> Result<IngestOutput> {
    spec.validate()?;
    if tables.interactions.rows.is_empty() {
        return Err(Error::Data("interaction table is empty".into()));
    }
    let joined = Joined::new(tables, spec)?;
    let user_col = tables
        .interactions
        .column(&spec.user_column)
        .ok_or_else(|| Error::Schema(format!("missing required column {:?}", spec.user_column)))?;
    let item_col = tables
        .interactions
        .column(&spec.item_column)
        .ok_or_else(|| Error::Schema(format!("missing required column {:?}", spec.item_column)))?;
    let ts_col = spec
        .timestamp_column
        .as_deref()
        .map(|c| require(&joined, c))
        .transpose()?;
    let sources = spec
        .domains
        .iter()
        .map(|d| match &d.column {
            Some(c) => Ok(DomainSource::Column(require(&joined, c)?)),
            None => Ok(DomainSource::FirstFlag(
                d.first_flag_of
                    .iter()
                    .map(|c| Ok((c.clone(), require(&joined, c)?)))
                    .collect::<Result<_>>()?,
            )),
        })
        .collect::<Result<Vec<_>>>()?;

    let mut parsed = Vec::with_capacity(tables.interactions.rows.len());
    let mut row_errors = Vec::new();
    for (r, row) in tables.interactions.rows.iter().enumerate() {
        match parse_row(&joined, spec, &sources, ts_col, user_col, item_col, r, row) {
            Ok(p) => parsed.push(p),
            Err(message) => row_errors.push(RowError { row: row.line, message }),
        }
    }
    let total = tables.interactions.rows.len();
    if row_errors.len() as f64 > spec.max_error_fraction * total as f64 {
        return Err(Error::RowErrors {
            failed: row_errors.len(),
            total,
            allowed: spec.max_error_fraction,
            first: row_errors.iter().take(5).cloned().collect(),
        });
    }
    for e in row_errors.iter().take(10) {
        log::warn!("skipped {e}");
    }

    let user_domain = spec
        .domains
        .iter()
        .position(|d| d.name == spec.user_id_domain)
        .expect("validated");
    let item_domain = spec
        .domains
        .iter()
        .position(|d| d.name == spec.item_id_domain)
        .expect("validated");

    if spec.min_user_interactions.is_some() || spec.max_user_interactions.is_some() {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for p in &parsed {
            *counts.entry(p.tokens[user_domain].as_str()).or_default() += 1;
        }
        let lo = spec.min_user_interactions.unwrap_or(0);
        let hi = spec.max_user_interactions.unwrap_or(usize::MAX);
        let keep: std::collections::HashSet<String> = counts
            .into_iter()
            .filter(|(_, c)| (lo..=hi).contains(c))
            .map(|(u, _)| u.to_owned())
            .collect();
        parsed.retain(|p| keep.contains(&p.tokens[user_domain]));
        if parsed.is_empty() {
            return Err(Error::Data("user interaction filter removed every row".into()));
        }
    }

    let mut dictionaries: Vec<ValueDictionary> = spec
        .domains
        .iter()
        .map(|d| match &d.bins {
            Some(b) => ValueDictionary::from_tokens((0..b.n_bins()).map(|i| b.label(i)).collect()),
            None => ValueDictionary::new(),
        })
        .collect();
    let interactions: Vec<Interaction> = parsed
        .iter()
        .map(|p| {
            let values = p
                .tokens
                .iter()
                .zip(dictionaries.iter_mut())
                .map(|(t, d)| d.intern(t))
                .collect();
            Interaction {
                sample: EncodedSample::new(values, 1),
                order_key: p.order_key,
            }
        })
        .collect();

    let domains = spec
        .domains
        .iter()
        .zip(&dictionaries)
        .map(|(d, dict)| Domain {
            name: d.name.clone(),
            cardinality: dict.len() as u32,
            side: d.side,
        })
        .collect();
    let schema = FeatureSchema::new(domains, user_domain, item_domain)?;
    Ok(IngestOutput {
        schema,
        dictionaries,
        interactions,
        row_errors,
        rows_read: total,
    })
}

#[allow(clippy::too_many_arguments)]
fn parse_row(
    joined: &Joined<'_>,
    spec: &IngestSpec,
    sources: &[DomainSource],
    ts_col: Option<ColumnRef>,
    user_col: usize,
    item_col: usize,
    index: usize,
    row: &RawRow,
) -> Result<ParsedRow, String> {
    let n_cols = joined.tables.interactions.columns.len();
    if row.fields.len() != n_cols {
        return Err(format!("expected {n_cols} fields, found {}", row.fields.len()));
    }
    let user_key = row.fields[user_col].as_str();
    let item_key = row.fields[item_col].as_str();
    let field = |c: ColumnRef| -> Result<&str, String> {
        let (table, r) = match c.source {
            Source::Interactions => return Ok(row.fields[c.index].as_str()),
            Source::Users => (
                joined.tables.users.as_ref().unwrap(),
                *joined
                    .user_index
                    .get(user_key)
                    .ok_or_else(|| format!("user {user_key:?} not found in user table"))?,
            ),
            Source::Items => (
                joined.tables.items.as_ref().unwrap(),
                *joined
                    .item_index
                    .get(item_key)
                    .ok_or_else(|| format!("item {item_key:?} not found in item table"))?,
            ),
        };
        table.rows[r]
            .fields
            .get(c.index)
            .map(String::as_str)
            .ok_or_else(|| format!("side-table line {} is short", table.rows[r].line))
    };

    let mut tokens = Vec::with_capacity(spec.domains.len());
    for (d, src) in spec.domains.iter().zip(sources) {
        let raw = match src {
            DomainSource::Column(c) => field(*c)?.to_owned(),
            DomainSource::FirstFlag(cols) => {
                let mut hit = String::new();
                for (name, c) in cols {
                    if field(*c)? == "1" {
                        hit = name.clone();
                        break;
                    }
                }
                hit
            }
        };
        if raw.is_empty() {
            match &d.missing_token {
                Some(m) => {
                    tokens.push(m.clone());
                    continue;
                }
                None => return Err(format!("empty value for domain {:?}", d.name)),
            }
        }
        let extracted = match &d.extract {
            None => raw,
            Some(Extract::Prefix(n)) => raw.chars().take(*n).collect(),
            Some(Extract::Year) => {
                let start = raw.char_indices().rev().nth(3).map(|(i, _)| i).unwrap_or(0);
                let year = &raw[start..];
                year.parse::<i32>()
                    .map_err(|_| format!("cannot read a year from {raw:?} for {:?}", d.name))?
                    .to_string()
            }
        };
        let token = match &d.bins {
            None => extracted,
            Some(b) => {
                let x: f64 = extracted
                    .parse()
                    .map_err(|_| format!("non-numeric value {extracted:?} for {:?}", d.name))?;
                if !x.is_finite() {
                    return Err(format!("non-finite value for {:?}", d.name));
                }
                b.label(b.bin(x))
            }
        };
        tokens.push(token);
    }
    let order_key = match ts_col {
        None => index as i64,
        Some(c) => {
            let raw = field(c)?;
            raw.parse::<i64>()
                .map_err(|_| format!("unparsable timestamp {raw:?}"))?
        }
    };
    Ok(ParsedRow { tokens, order_key })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(cols: &[&str]) -> TableSpec {
        TableSpec {
            path: "mem".into(),
            delimiter: ",".into(),
            header: false,
            columns: cols.iter().map(|c| c.to_string()).collect(),
            key: None,
        }
    }

    fn domain(name: &str, side: Side, column: &str) -> DomainSpec {
        DomainSpec {
            name: name.into(),
            side,
            column: Some(column.into()),
            first_flag_of: vec![],
            extract: None,
            bins: None,
            missing_token: None,
        }
    }

    fn spec(domains: Vec<DomainSpec>, cols: &[&str]) -> IngestSpec {
        IngestSpec {
            interactions: table(cols),
            user_table: None,
            item_table: None,
            user_column: "user".into(),
            item_column: "item".into(),
            timestamp_column: None,
            user_id_domain: "user-id".into(),
            item_id_domain: "item-id".into(),
            domains,
            max_error_fraction: 0.0,
            min_user_interactions: None,
            max_user_interactions: None,
        }
    }

    fn tables(text: &str, s: &IngestSpec) -> RawTables {
        RawTables {
            interactions: RawTable::from_str(text, &s.interactions).unwrap(),
            users: None,
            items: None,
        }
    }

    #[test]
    fn occupation_dictionary_is_first_seen() {
        let s = spec(
            vec![
                domain("user-id", Side::User, "user"),
                domain("occupation", Side::User, "occ"),
                domain("item-id", Side::Item, "item"),
            ],
            &["user", "occ", "item"],
        );
        let t = tables("a,student,1\nb,student,2\nc,student,1\nd,homemaker,3\n", &s);
        let out = ingest(&t, &s).unwrap();
        assert_eq!(out.schema.cardinality(1), 2);
        assert_eq!(out.dictionaries[1].get("student"), Some(0));
        assert_eq!(out.dictionaries[1].get("homemaker"), Some(1));
        assert!(out.interactions.iter().all(|i| i.sample.label == 1));
        assert_eq!(out.schema.cardinality(0), out.dictionaries[0].len() as u32);
    }

    #[test]
    fn age_bins_are_interval_indices() {
        let mut age = domain("age", Side::User, "age");
        age.bins = Some(BinSpec(vec![18.0, 30.0, 50.0]));
        let s = spec(
            vec![
                domain("user-id", Side::User, "user"),
                age,
                domain("item-id", Side::Item, "item"),
            ],
            &["user", "age", "item"],
        );
        let t = tables("a,12,1\nb,25,1\nc,70,1\n", &s);
        let out = ingest(&t, &s).unwrap();
        let bins: Vec<u32> = out.interactions.iter().map(|i| i.sample.values[1]).collect();
        assert_eq!(bins, vec![0, 1, 3]);
        assert_eq!(out.schema.cardinality(1), 4);
        assert_eq!(out.dictionaries[1].token(1), Some("[18,30)"));
    }

    #[test]
    fn bin_edges_must_increase() {
        assert!(BinSpec(vec![1.0, 1.0]).validate("x").is_err());
        assert!(BinSpec(vec![2.0, 1.0]).validate("x").is_err());
        assert!(BinSpec(vec![1.0, 2.0]).validate("x").is_ok());
        assert_eq!(BinSpec(vec![18.0]).bin(18.0), 1);
    }

    #[test]
    fn missing_column_is_a_schema_error() {
        let s = spec(
            vec![
                domain("user-id", Side::User, "user"),
                domain("item-id", Side::Item, "item"),
                domain("zip", Side::User, "zip"),
            ],
            &["user", "item"],
        );
        let t = tables("a,1\n", &s);
        assert!(matches!(ingest(&t, &s), Err(Error::Schema(_))));
    }

    #[test]
    fn bad_rows_are_reported_and_abort_past_threshold() {
        let mut age = domain("age", Side::User, "age");
        age.bins = Some(BinSpec(vec![18.0]));
        let mut s = spec(
            vec![
                domain("user-id", Side::User, "user"),
                age,
                domain("item-id", Side::Item, "item"),
            ],
            &["user", "age", "item"],
        );
        let text = "a,12,1\nb,old,1\nc,40,2\nd,41,2\n";
        let err = ingest(&tables(text, &s), &s).unwrap_err();
        match err {
            Error::RowErrors { failed, first, .. } => {
                assert_eq!(failed, 1);
                assert_eq!(first[0].row, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
        s.max_error_fraction = 0.25;
        let out = ingest(&tables(text, &s), &s).unwrap();
        assert_eq!(out.interactions.len(), 3);
        assert_eq!(out.row_errors.len(), 1);
    }

    #[test]
    fn joins_side_tables_and_extracts() {
        let mut s = spec(
            vec![
                domain("user-id", Side::User, "user"),
                DomainSpec {
                    extract: Some(Extract::Prefix(1)),
                    ..domain("zip-prefix", Side::User, "zip")
                },
                domain("item-id", Side::Item, "item"),
                DomainSpec {
                    extract: Some(Extract::Year),
                    bins: Some(BinSpec(vec![1980.0, 1990.0])),
                    missing_token: Some("unknown".into()),
                    ..domain("era", Side::Item, "date")
                },
                DomainSpec {
                    column: None,
                    first_flag_of: vec!["action".into(), "drama".into()],
                    missing_token: Some("none".into()),
                    ..domain("genre", Side::Item, "")
                },
            ],
            &["user", "item", "ts"],
        );
        s.timestamp_column = Some("ts".into());
        s.user_table = Some(TableSpec {
            columns: vec!["uid".into(), "zip".into()],
            key: Some("uid".into()),
            delimiter: "|".into(),
            ..table(&[])
        });
        s.item_table = Some(TableSpec {
            columns: vec!["iid".into(), "date".into(), "action".into(), "drama".into()],
            key: Some("iid".into()),
            delimiter: "|".into(),
            ..table(&[])
        });
        let t = RawTables {
            interactions: RawTable::from_str("u1,i1,5\nu2,i2,3\nu1,i3,9\n", &s.interactions).unwrap(),
            users: Some(RawTable::from_str("u1|85711\nu2|94043\n", s.user_table.as_ref().unwrap()).unwrap()),
            items: Some(
                RawTable::from_str(
                    "i1|01-Jan-1995|0|1\ni2||1|1\ni3|12-Mar-1975|0|0\n",
                    s.item_table.as_ref().unwrap(),
                )
                .unwrap(),
            ),
        };
        let out = ingest(&t, &s).unwrap();
        let toks: Vec<Vec<String>> = out
            .interactions
            .iter()
            .map(|i| super::super::decode(&i.sample, &out.dictionaries).unwrap())
            .collect();
        assert_eq!(toks[0], ["u1", "8", "i1", ">=1990", "drama"]);
        assert_eq!(toks[1], ["u2", "9", "i2", "unknown", "action"]);
        assert_eq!(toks[2], ["u1", "8", "i3", "<1980", "none"]);
        assert_eq!(out.interactions[2].order_key, 9);
        // bins reserve their slots before the missing token
        assert_eq!(out.schema.cardinality(3), 4);
    }

    #[test]
    fn user_interaction_filter() {
        let mut s = spec(
            vec![
                domain("user-id", Side::User, "user"),
                domain("item-id", Side::Item, "item"),
            ],
            &["user", "item"],
        );
        s.max_user_interactions = Some(1);
        let out = ingest(&tables("a,1\na,2\nb,1\n", &s), &s).unwrap();
        assert_eq!(out.interactions.len(), 1);
        assert_eq!(out.dictionaries[0].tokens(), ["b"]);
    }
}
