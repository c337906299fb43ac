use std::collections::HashMap;
use std::fmt;
use std::io::Read;
use std::path::Path;

use chrono::Datelike;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Attribute names understood by the movie catalog, in canonical order.
pub const MOVIE_ATTRIBUTES: [&str; 5] = ["genre", "year", "actors", "keywords", "runtime"];

/// Column header of a catalog file.
pub const CATALOG_COLUMNS: [&str; 7] = [
    "item_id", "title", "genres", "year", "actors", "keywords", "runtime",
];

const EARLIEST_YEAR: i32 = 1870;

static BUILTIN_MOVIES: &str = include_str!("../../data/movies.tsv");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CatalogError {
    #[error("catalog file {0} does not exist")]
    FileMissing(String),
    #[error("could not read catalog: {0}")]
    Io(String),
    #[error("schema mismatch at row {row}: {detail}")]
    SchemaMismatch { row: usize, detail: String },
    #[error("duplicate item id {id:?} at rows {rows:?}")]
    DuplicateId { id: String, rows: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown attribute {0:?}")]
pub struct UnknownAttribute(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogItem {
    pub id: String,
    pub title: String,
    pub genres: Vec<String>,
    pub year: i32,
    pub actors: Vec<String>,
    pub keywords: Vec<String>,
    /// Minutes.
    pub runtime: u32,
}

/// A borrowed view of one attribute of an item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttributeValue<'a> {
    List(&'a [String]),
    Integer(i64),
}

impl AttributeValue<'_> {
    /// The value rendered as individual strings.
    pub fn values(&self) -> Vec<String> {
        match self {
            AttributeValue::List(items) => items.to_vec(),
            AttributeValue::Integer(n) => vec![n.to_string()],
        }
    }

    pub fn is_populated(&self) -> bool {
        match self {
            AttributeValue::List(items) => !items.is_empty(),
            AttributeValue::Integer(_) => true,
        }
    }

    /// Whether the value satisfies a constraint: lists need a non-empty
    /// intersection with `accepted`, scalars must be a member of it.
    /// Comparison is case-insensitive.
    pub fn satisfies(&self, accepted: &[String]) -> bool {
        match self {
            AttributeValue::List(items) => items
                .iter()
                .any(|v| accepted.iter().any(|a| a.trim().eq_ignore_ascii_case(v))),
            AttributeValue::Integer(n) => {
                let s = n.to_string();
                accepted.iter().any(|a| a.trim() == s)
            }
        }
    }
}

impl fmt::Display for AttributeValue<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttributeValue::List(items) => f.write_str(&items.join(", ")),
            AttributeValue::Integer(n) => write!(f, "{n}"),
        }
    }
}

impl CatalogItem {
    pub fn attribute(&self, name: &str) -> Result<AttributeValue<'_>, UnknownAttribute> {
        Ok(match name {
            "genre" => AttributeValue::List(&self.genres),
            "year" => AttributeValue::Integer(self.year.into()),
            "actors" => AttributeValue::List(&self.actors),
            "keywords" => AttributeValue::List(&self.keywords),
            "runtime" => AttributeValue::Integer(self.runtime.into()),
            other => return Err(UnknownAttribute(other.to_string())),
        })
    }

    /// Attributes with at least one value, in canonical order.
    pub fn populated_attributes(&self) -> Vec<&'static str> {
        MOVIE_ATTRIBUTES
            .into_iter()
            .filter(|a| self.attribute(a).map(|v| v.is_populated()).unwrap_or(false))
            .collect()
    }
}

/// An immutable, id-indexed set of items.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Catalog {
    items: Vec<CatalogItem>,
    index: HashMap<String, usize>,
}

impl Catalog {
    pub fn from_items(items: Vec<CatalogItem>) -> Result<Self, CatalogError> {
        let mut index = HashMap::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            if let Some(&prev) = index.get(&item.id) {
                return Err(CatalogError::DuplicateId {
                    id: item.id.clone(),
                    rows: vec![prev + 2, i + 2],
                });
            }
            index.insert(item.id.clone(), i);
        }
        Ok(Self { items, index })
    }

    /// The catalog bundled with the movie recommendation task.
    pub fn builtin_movies() -> Self {
        parse_catalog(BUILTIN_MOVIES.as_bytes()).expect("bundled catalog is valid")
    }

    pub fn items(&self) -> &[CatalogItem] {
        &self.items
    }

    pub fn get(&self, id: &str) -> Option<&CatalogItem> {
        self.index.get(id).map(|&i| &self.items[i])
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<Catalog, CatalogError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CatalogError::FileMissing(path.display().to_string()),
        _ => CatalogError::Io(e.to_string()),
    })?;
    parse_catalog(file)
}

/// Parse tab-separated catalog text. Row numbers in errors are 1-based file
/// lines, the header being row 1.
pub fn parse_catalog<R: Read>(reader: R) -> Result<Catalog, CatalogError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .from_reader(reader);

    let header = rdr
        .headers()
        .map_err(|e| CatalogError::Io(e.to_string()))?
        .clone();
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != CATALOG_COLUMNS {
        return Err(CatalogError::SchemaMismatch {
            row: 1,
            detail: format!("expected columns {CATALOG_COLUMNS:?}, found {found:?}"),
        });
    }

    let current_year = chrono::Utc::now().year();
    let mut items = Vec::new();
    let mut first_row: HashMap<String, usize> = HashMap::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| CatalogError::SchemaMismatch {
            row,
            detail: e.to_string(),
        })?;
        if record.len() != CATALOG_COLUMNS.len() {
            return Err(CatalogError::SchemaMismatch {
                row,
                detail: format!(
                    "expected {} fields, found {}",
                    CATALOG_COLUMNS.len(),
                    record.len()
                ),
            });
        }
        let cell = |k: usize| record.get(k).unwrap_or("").trim();
        let mismatch = |column: &str, detail: String| CatalogError::SchemaMismatch {
            row,
            detail: format!("column {column}: {detail}"),
        };

        let id = cell(0);
        if id.is_empty() {
            return Err(mismatch("item_id", "empty".into()));
        }
        let title = cell(1);
        if title.is_empty() {
            return Err(mismatch("title", "empty".into()));
        }
        let year: i32 = cell(3)
            .parse()
            .map_err(|_| mismatch("year", format!("{:?} is not an integer", cell(3))))?;
        if !(EARLIEST_YEAR..=current_year).contains(&year) {
            return Err(mismatch(
                "year",
                format!("{year} outside [{EARLIEST_YEAR}, {current_year}]"),
            ));
        }
        let runtime: u32 = cell(6).parse().map_err(|_| {
            mismatch(
                "runtime",
                format!("{:?} is not a positive integer", cell(6)),
            )
        })?;
        if runtime == 0 {
            return Err(mismatch("runtime", "must be positive".into()));
        }

        if let Some(&prev) = first_row.get(id) {
            return Err(CatalogError::DuplicateId {
                id: id.to_string(),
                rows: vec![prev, row],
            });
        }
        first_row.insert(id.to_string(), row);

        items.push(CatalogItem {
            id: id.to_string(),
            title: title.to_string(),
            genres: split_list(cell(2)),
            year,
            actors: split_list(cell(4)),
            keywords: split_list(cell(5)),
            runtime,
        });
    }
    Catalog::from_items(items)
}

fn split_list(cell: &str) -> Vec<String> {
    cell.split('|')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "item_id\ttitle\tgenres\tyear\tactors\tkeywords\truntime\n";

    #[test]
    fn three_row_sample() {
        let text = format!(
            "{HEADER}a\tOne\tComedy\t2009\tX|Y\tk1\t90\nb\tTwo\tDrama\t2010\t\t\t100\nc\tThree\tComedy|Romance\t2008\tZ\tk2|k3\t110\n"
        );
        let cat = parse_catalog(text.as_bytes()).unwrap();
        assert_eq!(cat.len(), 3);
        let b = cat.get("b").unwrap();
        assert!(b.actors.is_empty());
        assert_eq!(b.populated_attributes(), vec!["genre", "year", "runtime"]);
    }

    #[test]
    fn bad_year_reports_row() {
        let text = format!("{HEADER}a\tOne\tComedy\t2009\t\t\t90\nb\tTwo\tDrama\t20x9\t\t\t100\n");
        match parse_catalog(text.as_bytes()).unwrap_err() {
            CatalogError::SchemaMismatch { row, detail } => {
                assert_eq!(row, 3);
                assert!(detail.contains("year"));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn duplicate_ids_list_both_rows() {
        let text = format!("{HEADER}a\tOne\tComedy\t2009\t\t\t90\nb\tTwo\tDrama\t2010\t\t\t100\na\tThree\tDrama\t2011\t\t\t80\n");
        assert_eq!(
            parse_catalog(text.as_bytes()).unwrap_err(),
            CatalogError::DuplicateId {
                id: "a".into(),
                rows: vec![2, 4]
            }
        );
    }

    #[test]
    fn header_and_range_checks() {
        let text = "id\ttitle\n";
        assert!(matches!(
            parse_catalog(text.as_bytes()).unwrap_err(),
            CatalogError::SchemaMismatch { row: 1, .. }
        ));
        let text = format!("{HEADER}a\tOne\tComedy\t1850\t\t\t90\n");
        assert!(matches!(
            parse_catalog(text.as_bytes()),
            Err(CatalogError::SchemaMismatch { .. })
        ));
        let text = format!("{HEADER}a\tOne\tComedy\t1999\t\t\t0\n");
        assert!(matches!(
            parse_catalog(text.as_bytes()),
            Err(CatalogError::SchemaMismatch { .. })
        ));
        let text = format!("{HEADER}a\tOne\tComedy\t1999\n");
        assert!(matches!(
            parse_catalog(text.as_bytes()),
            Err(CatalogError::SchemaMismatch { row: 2, .. })
        ));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load_catalog("/nonexistent/catalog.tsv"),
            Err(CatalogError::FileMissing(_))
        ));
    }

    #[test]
    fn builtin_catalog_loads() {
        let cat = Catalog::builtin_movies();
        assert!(cat.len() >= 40);
        assert!(cat
            .items()
            .iter()
            .all(|i| i.populated_attributes().len() >= 2));
    }

    #[test]
    fn satisfies_semantics() {
        let genres = vec!["Comedy".to_string(), "Romance".to_string()];
        let v = AttributeValue::List(&genres);
        assert!(v.satisfies(&["romance".into()]));
        assert!(v.satisfies(&["Drama".into(), "Comedy".into()]));
        assert!(!v.satisfies(&["Drama".into()]));
        assert!(AttributeValue::Integer(2009).satisfies(&["2009".into()]));
        assert!(!AttributeValue::Integer(2009).satisfies(&["2010".into()]));
    }
}
