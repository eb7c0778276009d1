//! MinervaExecutor: per-node subscan execution and the table write path.
//!
//! Workers parse their assigned chunks straight out of the local block
//! store, apply the pushed-down operators, and return partial results (rows
//! or mergeable aggregate accumulators) instead of raw data. Records are
//! line-oriented in both formats, so a record spanning a chunk boundary is
//! stitched by carrying the trailing partial line into the next chunk and
//! memory stays bounded by one chunk plus one record.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::chunkstore::{Chunk, ContentId};
use crate::dhtnet::{Network, PeerId, PlacementPolicy, SimMs};
use crate::error::{Error, Result};
use crate::merkle::build_fat_tree;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataFormat {
    Csv,
    Json,
}

impl DataFormat {
    pub fn name(&self) -> &'static str {
        match self {
            DataFormat::Csv => "csv",
            DataFormat::Json => "json",
        }
    }
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(DataFormat::Csv),
            "json" | "ndjson" => Ok(DataFormat::Json),
            other => Err(Error::Format(format!("unsupported format {other:?}"))),
        }
    }
}

/// A single field value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl Value {
    pub fn type_of(&self) -> ColumnType {
        match self {
            Value::Null => ColumnType::Null,
            Value::Bool(_) => ColumnType::Boolean,
            Value::Int(_) => ColumnType::Integer,
            Value::Float(_) => ColumnType::Float,
            Value::Text(_) => ColumnType::Text,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }

    /// Total order used for min/max, grouping and deterministic output:
    /// null < bool < numeric < text, numerics compared by value with Int
    /// before Float on exact ties.
    pub fn sort_cmp(&self, other: &Value) -> Ordering {
        fn rank(v: &Value) -> u8 {
            match v {
                Value::Null => 0,
                Value::Bool(_) => 1,
                Value::Int(_) | Value::Float(_) => 2,
                Value::Text(_) => 3,
            }
        }
        match (self, other) {
            (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
            (Value::Text(a), Value::Text(b)) => a.cmp(b),
            (a, b) if rank(a) == 2 && rank(b) == 2 => {
                let fa = a.as_f64().unwrap();
                let fb = b.as_f64().unwrap();
                fa.total_cmp(&fb).then_with(|| {
                    let ai = matches!(a, Value::Int(_));
                    let bi = matches!(b, Value::Int(_));
                    bi.cmp(&ai)
                })
            }
            (a, b) => rank(a).cmp(&rank(b)),
        }
    }

    /// Render for CSV output; `Null` is the empty field.
    pub fn render_csv(&self) -> String {
        match self {
            Value::Null => String::new(),
            Value::Bool(b) => b.to_string(),
            Value::Int(i) => i.to_string(),
            Value::Float(f) => f.to_string(),
            Value::Text(t) => {
                if t.contains(',') || t.contains('"') || t.is_empty() {
                    format!("\"{}\"", t.replace('"', "\"\""))
                } else {
                    t.clone()
                }
            }
        }
    }

    fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Null => serde_json::Value::Null,
            Value::Bool(b) => serde_json::Value::Bool(*b),
            Value::Int(i) => serde_json::Value::from(*i),
            Value::Float(f) => serde_json::Value::from(*f),
            Value::Text(t) => serde_json::Value::from(t.clone()),
        }
    }
}

/// Group keys and ordered containers need a total order over values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupKey(pub Value);

impl Eq for GroupKey {}

impl PartialOrd for GroupKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for GroupKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.sort_cmp(&other.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnType {
    Null,
    Boolean,
    Integer,
    Float,
    Text,
}

impl ColumnType {
    /// Per-column promotion across rows: null absorbs into anything,
    /// int widens to float, and any other mix falls back to text.
    pub fn promote(self, other: ColumnType) -> ColumnType {
        use ColumnType::*;
        match (self, other) {
            (a, b) if a == b => a,
            (Null, b) => b,
            (a, Null) => a,
            (Integer, Float) | (Float, Integer) => Float,
            _ => Text,
        }
    }
}

/// A parsed table fragment: ordered schema plus rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordBatch {
    pub columns: Vec<String>,
    pub types: Vec<ColumnType>,
    pub rows: Vec<Vec<Value>>,
}

impl RecordBatch {
    pub fn empty(columns: Vec<String>) -> Self {
        let types = vec![ColumnType::Null; columns.len()];
        RecordBatch {
            columns,
            types,
            rows: Vec::new(),
        }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn push_row(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        for (ty, value) in self.types.iter_mut().zip(&row) {
            *ty = ty.promote(value.type_of());
        }
        self.rows.push(row);
    }

    /// Add a column discovered mid-stream (schema-free JSON); existing rows
    /// are padded with nulls.
    fn add_column(&mut self, name: String) -> usize {
        self.columns.push(name);
        self.types.push(ColumnType::Null);
        for row in &mut self.rows {
            row.push(Value::Null);
        }
        self.columns.len() - 1
    }

    pub fn project(&self, wanted: &[String]) -> RecordBatch {
        let indexes: Vec<Option<usize>> = wanted.iter().map(|w| self.column_index(w)).collect();
        let mut out = RecordBatch::empty(wanted.to_vec());
        for row in &self.rows {
            out.push_row(
                indexes
                    .iter()
                    .map(|ix| ix.map_or(Value::Null, |i| row[i].clone()))
                    .collect(),
            );
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

/// One column-vs-literal comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub column: String,
    pub op: CmpOp,
    pub literal: Value,
}

impl Comparison {
    /// SQL-style three-valued comparison collapsed to a boolean: nulls and
    /// incomparable type mixes never match.
    pub fn matches(&self, value: &Value) -> bool {
        let ordering = match (value, &self.literal) {
            (Value::Null, _) | (_, Value::Null) => return false,
            (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
            (Value::Text(a), Value::Text(b)) => a.cmp(b),
            (a, b) => match (a.as_f64(), b.as_f64()) {
                (Some(fa), Some(fb)) => match fa.partial_cmp(&fb) {
                    Some(ord) => ord,
                    None => return false,
                },
                _ => return false,
            },
        };
        match self.op {
            CmpOp::Eq => ordering == Ordering::Equal,
            CmpOp::Ne => ordering != Ordering::Equal,
            CmpOp::Lt => ordering == Ordering::Less,
            CmpOp::Le => ordering != Ordering::Greater,
            CmpOp::Gt => ordering == Ordering::Greater,
            CmpOp::Ge => ordering != Ordering::Less,
        }
    }
}

/// Conjunction of comparisons.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub clauses: Vec<Comparison>,
}

impl Predicate {
    pub fn matches(&self, batch: &RecordBatch, row: &[Value]) -> bool {
        self.clauses.iter().all(|clause| {
            batch
                .column_index(&clause.column)
                .map_or(false, |i| clause.matches(&row[i]))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AggFn {
    CountStar,
    Count(String),
    Sum(String),
    Min(String),
    Max(String),
}

impl AggFn {
    pub fn column(&self) -> Option<&str> {
        match self {
            AggFn::CountStar => None,
            AggFn::Count(c) | AggFn::Sum(c) | AggFn::Min(c) | AggFn::Max(c) => Some(c),
        }
    }

    pub fn label(&self) -> String {
        match self {
            AggFn::CountStar => "count(*)".to_string(),
            AggFn::Count(c) => format!("count({c})"),
            AggFn::Sum(c) => format!("sum({c})"),
            AggFn::Min(c) => format!("min({c})"),
            AggFn::Max(c) => format!("max({c})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateSpec {
    pub group_by: Option<String>,
    pub aggs: Vec<AggFn>,
}

/// Operators pushed down to the data-holding peer.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Pushdown {
    /// Columns the worker ships back; `None` means all.
    pub projection: Option<Vec<String>>,
    pub predicate: Option<Predicate>,
    pub aggregate: Option<AggregateSpec>,
}

/// Per-worker fragment of a query plan.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubScan {
    pub target_peer: PeerId,
    /// Assigned leaves in object order (positions, so duplicated chunks are
    /// scanned as often as they occur).
    pub leaf_cids: Vec<ContentId>,
    /// Object chunk position of each assigned leaf, aligned with
    /// `leaf_cids`. Contiguous positions form runs the worker can stitch
    /// locally; run edges go back to the foreman as boundary pieces.
    pub positions: Vec<usize>,
    /// Total chunk count of the object, so a worker can tell whether its
    /// last run ends the object.
    pub object_chunks: usize,
    pub format: DataFormat,
    /// Column names for CSV objects; carried in the plan so workers without
    /// the header chunk can still resolve pushdown columns.
    pub schema: Option<Vec<String>>,
    /// True for the fragment holding the object's first chunk, whose first
    /// line is the CSV header.
    pub skip_leading_header: bool,
    pub pushdown: Pushdown,
}

/// Mergeable accumulator per aggregate function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AggState {
    Count(u64),
    SumEmpty,
    SumInt(i64),
    SumFloat(f64),
    Extreme(Option<Value>),
}

impl AggState {
    fn new(f: &AggFn) -> AggState {
        match f {
            AggFn::CountStar | AggFn::Count(_) => AggState::Count(0),
            AggFn::Sum(_) => AggState::SumEmpty,
            AggFn::Min(_) | AggFn::Max(_) => AggState::Extreme(None),
        }
    }

    fn accumulate(&mut self, f: &AggFn, value: Option<&Value>) -> Result<()> {
        match (f, value) {
            (AggFn::CountStar, _) => {
                if let AggState::Count(n) = self {
                    *n += 1;
                }
            }
            (AggFn::Count(_), Some(v)) if !v.is_null() => {
                if let AggState::Count(n) = self {
                    *n += 1;
                }
            }
            (AggFn::Count(_), _) => {}
            (AggFn::Sum(col), Some(v)) if !v.is_null() => {
                let add = match v {
                    Value::Int(i) => SumKind::Int(*i),
                    Value::Float(x) => SumKind::Float(*x),
                    other => {
                        return Err(Error::PlanError(format!(
                            "sum({col}) over non-numeric value {other:?}"
                        )))
                    }
                };
                self.add_sum(add);
            }
            (AggFn::Sum(_), _) => {}
            (AggFn::Min(_), Some(v)) if !v.is_null() => {
                if let AggState::Extreme(cur) = self {
                    let better = cur
                        .as_ref()
                        .map_or(true, |c| v.sort_cmp(c) == Ordering::Less);
                    if better {
                        *cur = Some(v.clone());
                    }
                }
            }
            (AggFn::Max(_), Some(v)) if !v.is_null() => {
                if let AggState::Extreme(cur) = self {
                    let better = cur
                        .as_ref()
                        .map_or(true, |c| v.sort_cmp(c) == Ordering::Greater);
                    if better {
                        *cur = Some(v.clone());
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn add_sum(&mut self, add: SumKind) {
        *self = match (&*self, add) {
            (AggState::SumEmpty, SumKind::Int(i)) => AggState::SumInt(i),
            (AggState::SumEmpty, SumKind::Float(f)) => AggState::SumFloat(f),
            (AggState::SumInt(a), SumKind::Int(b)) => AggState::SumInt(a + b),
            (AggState::SumInt(a), SumKind::Float(b)) => AggState::SumFloat(*a as f64 + b),
            (AggState::SumFloat(a), SumKind::Int(b)) => AggState::SumFloat(a + b as f64),
            (AggState::SumFloat(a), SumKind::Float(b)) => AggState::SumFloat(a + b),
            (other, _) => other.clone(),
        };
    }

    /// Associative, commutative merge of two partials of the same function.
    pub fn merge(&mut self, other: &AggState, f: &AggFn) {
        match (&mut *self, other) {
            (AggState::Count(a), AggState::Count(b)) => *a += b,
            (_, AggState::SumEmpty) => {}
            (AggState::SumEmpty, b @ (AggState::SumInt(_) | AggState::SumFloat(_))) => {
                *self = b.clone();
            }
            (AggState::SumInt(a), AggState::SumInt(b)) => *a += b,
            (AggState::SumInt(a), AggState::SumFloat(b)) => {
                *self = AggState::SumFloat(*a as f64 + b);
            }
            (AggState::SumFloat(a), AggState::SumInt(b)) => *a += *b as f64,
            (AggState::SumFloat(a), AggState::SumFloat(b)) => *a += b,
            (AggState::Extreme(a), AggState::Extreme(Some(v))) => {
                let take = match (&a, f) {
                    (None, _) => true,
                    (Some(c), AggFn::Min(_)) => v.sort_cmp(c) == Ordering::Less,
                    (Some(c), AggFn::Max(_)) => v.sort_cmp(c) == Ordering::Greater,
                    _ => false,
                };
                if take {
                    *a = Some(v.clone());
                }
            }
            (AggState::Extreme(_), AggState::Extreme(None)) => {}
            _ => {}
        }
    }

    pub fn finish(&self) -> Value {
        match self {
            AggState::Count(n) => Value::Int(*n as i64),
            AggState::SumEmpty => Value::Null,
            AggState::SumInt(i) => Value::Int(*i),
            AggState::SumFloat(f) => Value::Float(*f),
            AggState::Extreme(v) => v.clone().unwrap_or(Value::Null),
        }
    }
}

enum SumKind {
    Int(i64),
    Float(f64),
}

/// Partial aggregation result: per-group accumulators.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AggPartial {
    pub spec: AggregateSpec,
    pub groups: BTreeMap<GroupKey, Vec<AggState>>,
}

impl AggPartial {
    pub fn new(spec: AggregateSpec) -> Self {
        AggPartial {
            spec,
            groups: BTreeMap::new(),
        }
    }

    fn accumulate_row(&mut self, batch: &RecordBatch, row: &[Value]) -> Result<()> {
        let key = match &self.spec.group_by {
            Some(col) => GroupKey(
                batch
                    .column_index(col)
                    .map_or(Value::Null, |i| row[i].clone()),
            ),
            None => GroupKey(Value::Null),
        };
        let aggs = &self.spec.aggs;
        let states = self
            .groups
            .entry(key)
            .or_insert_with(|| aggs.iter().map(AggState::new).collect());
        for (state, f) in states.iter_mut().zip(aggs) {
            let value = f.column().and_then(|c| {
                batch.column_index(c).map(|i| &row[i])
            });
            state.accumulate(f, value)?;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &AggPartial) {
        for (key, states) in &other.groups {
            let aggs = &self.spec.aggs;
            let mine = self
                .groups
                .entry(key.clone())
                .or_insert_with(|| aggs.iter().map(AggState::new).collect());
            for ((a, b), f) in mine.iter_mut().zip(states).zip(aggs) {
                a.merge(b, f);
            }
        }
    }

    /// Collapse accumulators into output rows: the group column (if any)
    /// followed by one column per aggregate.
    pub fn finalize(mut self) -> RecordBatch {
        let mut columns = Vec::new();
        if let Some(group) = &self.spec.group_by {
            columns.push(group.clone());
        }
        columns.extend(self.spec.aggs.iter().map(AggFn::label));
        let mut batch = RecordBatch::empty(columns);
        if self.spec.group_by.is_none() && self.groups.is_empty() {
            // A global aggregate over an empty input still yields one row.
            self.groups.insert(
                GroupKey(Value::Null),
                self.spec.aggs.iter().map(AggState::new).collect(),
            );
        }
        for (key, states) in self.groups {
            let mut row = Vec::new();
            if self.spec.group_by.is_some() {
                row.push(key.0);
            }
            row.extend(states.iter().map(AggState::finish));
            batch.push_row(row);
        }
        batch
    }
}

/// What a worker ships back: filtered/projected rows or accumulators.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum PartialResult {
    Rows(RecordBatch),
    Aggregates(AggPartial),
}

impl PartialResult {
    /// Approximate wire size of this partial, used for transfer-time and
    /// bytes-shipped accounting.
    pub fn wire_bytes(&self, format: DataFormat) -> u64 {
        match self {
            PartialResult::Rows(batch) => serialize_batch(batch, format).len() as u64,
            PartialResult::Aggregates(partial) => {
                serde_json::to_vec(&partial.groups).map_or(0, |v| v.len() as u64)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Record readers

fn infer_csv_value(field: &str) -> Value {
    if field.is_empty() {
        return Value::Null;
    }
    if field.eq_ignore_ascii_case("true") {
        return Value::Bool(true);
    }
    if field.eq_ignore_ascii_case("false") {
        return Value::Bool(false);
    }
    if let Ok(i) = field.parse::<i64>() {
        return Value::Int(i);
    }
    if let Ok(f) = field.parse::<f64>() {
        if f.is_finite() {
            return Value::Float(f);
        }
    }
    Value::Text(field.to_string())
}

/// Split one CSV line into fields: comma separator, optional double-quoted
/// fields with `""` escapes. Quoted fields stay text; bare fields are
/// type-inferred.
fn parse_csv_line(line: &str, record: usize) -> Result<Vec<Value>> {
    let mut fields = Vec::new();
    let mut chars = line.chars().peekable();
    loop {
        let mut buf = String::new();
        if chars.peek() == Some(&'"') {
            chars.next();
            loop {
                match chars.next() {
                    Some('"') => {
                        if chars.peek() == Some(&'"') {
                            chars.next();
                            buf.push('"');
                        } else {
                            break;
                        }
                    }
                    Some(c) => buf.push(c),
                    None => {
                        return Err(Error::RowParse {
                            line: record,
                            message: "unterminated quoted field".into(),
                        })
                    }
                }
            }
            match chars.next() {
                Some(',') => {
                    fields.push(Value::Text(buf));
                    continue;
                }
                None => {
                    fields.push(Value::Text(buf));
                    break;
                }
                Some(c) => {
                    return Err(Error::RowParse {
                        line: record,
                        message: format!("unexpected {c:?} after closing quote"),
                    })
                }
            }
        }
        let mut done = true;
        for c in chars.by_ref() {
            if c == ',' {
                done = false;
                break;
            }
            buf.push(c);
        }
        fields.push(infer_csv_value(&buf));
        if done {
            break;
        }
    }
    Ok(fields)
}

/// Split a CSV header line into column names.
pub fn parse_header_fields(line: &str) -> Vec<String> {
    parse_csv_line(line, 0)
        .unwrap_or_default()
        .into_iter()
        .map(|v| match v {
            Value::Text(t) => t,
            other => match other {
                Value::Null => String::new(),
                Value::Bool(b) => b.to_string(),
                Value::Int(i) => i.to_string(),
                Value::Float(f) => f.to_string(),
                Value::Text(t) => t,
            },
        })
        .collect()
}

fn parse_json_line(batch: &mut RecordBatch, line: &str, record: usize) -> Result<()> {
    let parsed: serde_json::Value =
        serde_json::from_str(line).map_err(|e| Error::RowParse {
            line: record,
            message: e.to_string(),
        })?;
    let object = parsed.as_object().ok_or_else(|| Error::RowParse {
        line: record,
        message: "expected a JSON object per line".into(),
    })?;
    let mut row = vec![Value::Null; batch.columns.len()];
    for (key, value) in object {
        let converted = match value {
            serde_json::Value::Null => Value::Null,
            serde_json::Value::Bool(b) => Value::Bool(*b),
            serde_json::Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Value::Int(i)
                } else {
                    Value::Float(n.as_f64().unwrap_or(f64::NAN))
                }
            }
            serde_json::Value::String(s) => Value::Text(s.clone()),
            _ => {
                return Err(Error::RowParse {
                    line: record,
                    message: format!("nested value under key {key:?} is unsupported"),
                })
            }
        };
        let index = match batch.column_index(key) {
            Some(i) => i,
            None => {
                batch.add_column(key.clone());
                row.push(Value::Null);
                batch.columns.len() - 1
            }
        };
        row[index] = converted;
    }
    batch.push_row(row);
    Ok(())
}

/// How a fragment's raw bytes should be interpreted.
#[derive(Clone, Debug)]
pub struct ReadSpec {
    pub format: DataFormat,
    pub schema: Option<Vec<String>>,
    pub skip_leading_header: bool,
}

/// Streaming line-to-row parser shared by every read path.
struct LineParser<'a> {
    spec: &'a ReadSpec,
    batch: RecordBatch,
    record: usize,
    rows_scanned: u64,
    pending_first: bool,
}

impl<'a> LineParser<'a> {
    fn new(spec: &'a ReadSpec) -> Result<Self> {
        let batch = match (&spec.format, &spec.schema) {
            (DataFormat::Csv, Some(columns)) => RecordBatch::empty(columns.clone()),
            (DataFormat::Csv, None) => {
                return Err(Error::PlanError(
                    "csv fragments need a schema in the plan".into(),
                ))
            }
            (DataFormat::Json, _) => RecordBatch::empty(Vec::new()),
        };
        Ok(LineParser {
            spec,
            batch,
            record: 0,
            rows_scanned: 0,
            pending_first: true,
        })
    }

    fn line(&mut self, raw: &[u8]) -> Result<()> {
        let mut text = std::str::from_utf8(raw).map_err(|_| Error::RowParse {
            line: self.record + 1,
            message: "invalid utf-8".into(),
        })?;
        if let Some(stripped) = text.strip_suffix('\r') {
            text = stripped;
        }
        if self.pending_first {
            self.pending_first = false;
            if self.spec.skip_leading_header && self.spec.format == DataFormat::Csv {
                return Ok(());
            }
        }
        if text.is_empty() {
            return Ok(());
        }
        self.record += 1;
        self.rows_scanned += 1;
        match self.spec.format {
            DataFormat::Csv => {
                let fields = parse_csv_line(text, self.record)?;
                if fields.len() != self.batch.columns.len() {
                    return Err(Error::RowParse {
                        line: self.record,
                        message: format!(
                            "expected {} fields, found {}",
                            self.batch.columns.len(),
                            fields.len()
                        ),
                    });
                }
                self.batch.push_row(fields);
            }
            DataFormat::Json => {
                let record = self.record;
                parse_json_line(&mut self.batch, text, record)?;
            }
        }
        Ok(())
    }

    fn finish(self) -> (RecordBatch, u64) {
        (self.batch, self.rows_scanned)
    }
}

/// Parse records from a contiguous sequence of chunks, stitching records
/// that span chunk boundaries. Only the carry of one partial record is kept
/// between chunks.
pub fn read_records<I>(chunks: I, spec: &ReadSpec) -> Result<(RecordBatch, u64)>
where
    I: IntoIterator<Item = Result<Arc<Chunk>>>,
{
    let mut parser = LineParser::new(spec)?;
    let mut carry: Vec<u8> = Vec::new();
    for chunk in chunks {
        let chunk = chunk?;
        let bytes = &chunk.bytes;
        let mut start = 0usize;
        for (pos, byte) in bytes.iter().enumerate() {
            if *byte == b'\n' {
                if carry.is_empty() {
                    parser.line(&bytes[start..pos])?;
                } else {
                    carry.extend_from_slice(&bytes[start..pos]);
                    let line = std::mem::take(&mut carry);
                    parser.line(&line)?;
                }
                start = pos + 1;
            }
        }
        carry.extend_from_slice(&bytes[start..]);
    }
    if !carry.is_empty() {
        parser.line(&carry)?;
    }
    Ok(parser.finish())
}

/// Unparsed bytes at a fragment run's edge. A record crossing a boundary
/// between chunks held by different workers is assembled at the foreman out
/// of these pieces.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PieceKind {
    /// Bytes after a run's last newline: they open a record continuing at
    /// `continue_at`.
    Opener,
    /// A run without any newline: the record passes straight through.
    Bridge,
    /// Bytes before a run's first newline: they close the record arriving
    /// at this run's first position.
    Closer,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundaryPiece {
    pub kind: PieceKind,
    /// Object position where a seeker finds this piece (closers, bridges),
    /// or where the opened record continues (openers).
    pub position: usize,
    /// For bridges, the record continues at this position afterwards.
    pub continue_at: usize,
    pub bytes: Vec<u8>,
    /// The opened record begins at byte zero of the object (header line for
    /// CSV objects).
    pub at_object_start: bool,
}

/// Worker-side fragment scan: parses every record that lies wholly inside
/// one of the fragment's contiguous runs and emits the run edges as
/// boundary pieces.
pub struct FragmentScan {
    pub batch: RecordBatch,
    pub rows_scanned: u64,
    pub pieces: Vec<BoundaryPiece>,
}

pub fn scan_fragment(
    chunks: &[(usize, Arc<Chunk>)],
    object_chunks: usize,
    spec: &ReadSpec,
) -> Result<FragmentScan> {
    let mut parser = LineParser::new(spec)?;
    let mut pieces: Vec<BoundaryPiece> = Vec::new();

    let mut index = 0;
    while index < chunks.len() {
        // Extend the run while positions stay contiguous.
        let run_start = index;
        while index + 1 < chunks.len() && chunks[index + 1].0 == chunks[index].0 + 1 {
            index += 1;
        }
        let run = &chunks[run_start..=index];
        index += 1;

        let first_position = run[0].0;
        let last_position = run[run.len() - 1].0;
        let starts_object = first_position == 0;

        let mut carry: Vec<u8> = Vec::new();
        let mut saw_newline = false;
        for (_, chunk) in run {
            let bytes = &chunk.bytes;
            let mut start = 0usize;
            for (pos, byte) in bytes.iter().enumerate() {
                if *byte == b'\n' {
                    carry.extend_from_slice(&bytes[start..pos]);
                    let line = std::mem::take(&mut carry);
                    if !saw_newline {
                        saw_newline = true;
                        // The bytes before a run's first newline belong to
                        // a record that started elsewhere, unless the run
                        // starts the object.
                        if starts_object {
                            parser.line(&line)?;
                        } else {
                            pieces.push(BoundaryPiece {
                                kind: PieceKind::Closer,
                                position: first_position,
                                continue_at: 0,
                                bytes: line,
                                at_object_start: false,
                            });
                        }
                    } else {
                        parser.line(&line)?;
                    }
                    start = pos + 1;
                }
            }
            carry.extend_from_slice(&bytes[start..]);
        }

        if saw_newline {
            pieces.push(BoundaryPiece {
                kind: PieceKind::Opener,
                position: last_position + 1,
                continue_at: 0,
                bytes: carry,
                at_object_start: false,
            });
        } else if starts_object && last_position + 1 == object_chunks {
            // The entire object is a single unterminated record.
            if !carry.is_empty() {
                parser.line(&carry)?;
            }
        } else if starts_object {
            pieces.push(BoundaryPiece {
                kind: PieceKind::Opener,
                position: last_position + 1,
                continue_at: 0,
                bytes: carry,
                at_object_start: true,
            });
        } else {
            pieces.push(BoundaryPiece {
                kind: PieceKind::Bridge,
                position: first_position,
                continue_at: last_position + 1,
                bytes: carry,
                at_object_start: false,
            });
        }
    }

    let (batch, rows_scanned) = parser.finish();
    Ok(FragmentScan {
        batch,
        rows_scanned,
        pieces,
    })
}

/// Stitch boundary pieces from all fragments back into complete records.
/// Returns the raw record bytes plus whether each record starts the object.
pub fn assemble_boundary_records(
    pieces: Vec<BoundaryPiece>,
    object_chunks: usize,
) -> Result<Vec<(Vec<u8>, bool)>> {
    use std::collections::HashMap;
    let mut continuations: HashMap<usize, BoundaryPiece> = HashMap::new();
    let mut openers: Vec<BoundaryPiece> = Vec::new();
    for piece in pieces {
        match piece.kind {
            PieceKind::Opener => openers.push(piece),
            PieceKind::Closer | PieceKind::Bridge => {
                continuations.insert(piece.position, piece);
            }
        }
    }
    openers.sort_by_key(|p| p.position);
    let mut records = Vec::new();
    for opener in openers {
        let mut bytes = opener.bytes;
        let mut position = opener.position;
        loop {
            if position >= object_chunks {
                break;
            }
            match continuations.remove(&position) {
                Some(piece) => match piece.kind {
                    PieceKind::Closer => {
                        bytes.extend_from_slice(&piece.bytes);
                        break;
                    }
                    PieceKind::Bridge => {
                        bytes.extend_from_slice(&piece.bytes);
                        position = piece.continue_at;
                    }
                    PieceKind::Opener => unreachable!(),
                },
                None => {
                    return Err(Error::Integrity(format!(
                        "boundary record lost its continuation at chunk {position}"
                    )))
                }
            }
        }
        if !bytes.is_empty() {
            records.push((bytes, opener.at_object_start));
        }
    }
    Ok(records)
}

/// Parse assembled boundary records at the foreman. An `at_object_start`
/// record is the CSV header and is skipped.
pub fn parse_boundary_records(
    records: &[(Vec<u8>, bool)],
    spec: &ReadSpec,
) -> Result<(RecordBatch, u64)> {
    let inner = ReadSpec {
        format: spec.format,
        schema: spec.schema.clone(),
        skip_leading_header: false,
    };
    let mut parser = LineParser::new(&inner)?;
    for (bytes, at_object_start) in records {
        if *at_object_start && spec.format == DataFormat::Csv {
            continue;
        }
        parser.line(bytes)?;
    }
    Ok(parser.finish())
}

// ---------------------------------------------------------------------------
// Subscan execution

/// Apply filter, then projection, then partial aggregation.
pub fn apply_pushdown(batch: RecordBatch, pushdown: &Pushdown) -> Result<PartialResult> {
    let filtered: Vec<Vec<Value>> = match &pushdown.predicate {
        Some(predicate) => batch
            .rows
            .iter()
            .filter(|row| predicate.matches(&batch, row))
            .cloned()
            .collect(),
        None => batch.rows.clone(),
    };
    let mut surviving = RecordBatch::empty(batch.columns.clone());
    for row in filtered {
        surviving.push_row(row);
    }
    if let Some(spec) = &pushdown.aggregate {
        let mut partial = AggPartial::new(spec.clone());
        for row in &surviving.rows {
            partial.accumulate_row(&surviving, row)?;
        }
        return Ok(PartialResult::Aggregates(partial));
    }
    let projected = match &pushdown.projection {
        Some(columns) => surviving.project(columns),
        None => surviving,
    };
    Ok(PartialResult::Rows(projected))
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SubScanStats {
    pub rows_scanned: u64,
    pub result_bytes: u64,
    pub compute_ms: SimMs,
    pub transfer_ms: SimMs,
}

impl SubScanStats {
    pub fn elapsed(&self) -> SimMs {
        self.compute_ms + self.transfer_ms
    }
}

/// Run a subscan on its target peer against the peer's local store and
/// account virtual time: rows scanned times the peer's per-row cost, plus
/// the transfer of the result (not the raw data) when the worker is remote.
/// Boundary pieces ride back with the result for foreman-side stitching.
pub fn execute_subscan(
    net: &Network,
    foreman: &PeerId,
    scan: &SubScan,
) -> Result<(PartialResult, SubScanStats, Vec<BoundaryPiece>)> {
    let peer = net.peer(&scan.target_peer)?;
    if !peer.is_online() {
        return Err(Error::TransferFailure(format!(
            "peer {} is offline",
            scan.target_peer
        )));
    }
    let chunks: Vec<(usize, Arc<Chunk>)> = {
        let store = peer.store.read().unwrap();
        scan.positions
            .iter()
            .zip(&scan.leaf_cids)
            .map(|(position, cid)| Ok((*position, store.get(cid)?)))
            .collect::<Result<_>>()?
    };
    let spec = ReadSpec {
        format: scan.format,
        schema: scan.schema.clone(),
        skip_leading_header: scan.skip_leading_header,
    };
    let scanned = scan_fragment(&chunks, scan.object_chunks, &spec)?;
    let partial = apply_pushdown(scanned.batch, &scan.pushdown)?;
    let piece_bytes: u64 = scanned.pieces.iter().map(|p| p.bytes.len() as u64).sum();
    let result_bytes = partial.wire_bytes(scan.format) + piece_bytes;
    let transfer_ms = if scan.target_peer == *foreman {
        0.0
    } else {
        result_bytes as f64 / net.bytes_per_ms
    };
    Ok((
        partial,
        SubScanStats {
            rows_scanned: scanned.rows_scanned,
            result_bytes,
            compute_ms: scanned.rows_scanned as f64 * peer.compute_cost_ms_per_row,
            transfer_ms,
        },
        scanned.pieces,
    ))
}

/// Ship raw chunk bytes from a provider to the foreman (the fallback for
/// peers without executor support). Transfer cost covers the full payload.
pub fn fetch_raw(
    net: &Network,
    provider: &PeerId,
    leaf_cids: &[ContentId],
) -> Result<(Vec<Arc<Chunk>>, u64, SimMs)> {
    let peer = net.peer(provider)?;
    if !peer.is_online() {
        return Err(Error::TransferFailure(format!(
            "provider {provider} is offline"
        )));
    }
    let store = peer.store.read().unwrap();
    let mut chunks = Vec::with_capacity(leaf_cids.len());
    let mut bytes = 0u64;
    for cid in leaf_cids {
        let chunk = store.get(cid)?;
        bytes += chunk.size() as u64;
        chunks.push(chunk);
    }
    let transfer_ms = bytes as f64 / net.bytes_per_ms;
    Ok((chunks, bytes, transfer_ms))
}

// ---------------------------------------------------------------------------
// Write path

pub fn serialize_row(batch: &RecordBatch, row: &[Value], format: DataFormat) -> String {
    match format {
        DataFormat::Csv => row
            .iter()
            .map(Value::render_csv)
            .collect::<Vec<_>>()
            .join(","),
        DataFormat::Json => {
            let mut object = serde_json::Map::new();
            for (name, value) in batch.columns.iter().zip(row) {
                object.insert(name.clone(), value.to_json());
            }
            serde_json::Value::Object(object).to_string()
        }
    }
}

pub fn csv_header_line(columns: &[String]) -> String {
    columns
        .iter()
        .map(|c| Value::Text(c.clone()).render_csv())
        .collect::<Vec<_>>()
        .join(",")
}

/// Serialize a whole batch, header line included for CSV.
pub fn serialize_batch(batch: &RecordBatch, format: DataFormat) -> Vec<u8> {
    let mut out = String::new();
    if format == DataFormat::Csv {
        out.push_str(&csv_header_line(&batch.columns));
        out.push('\n');
    }
    for row in &batch.rows {
        out.push_str(&serialize_row(batch, row, format));
        out.push('\n');
    }
    out.into_bytes()
}

/// Fixed virtual-time overhead of writing a table back: hashing the new
/// chunks plus publishing the records.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct WriteCosts {
    pub hash_ms_per_chunk: f64,
    pub publish_ms: f64,
}

impl Default for WriteCosts {
    fn default() -> Self {
        WriteCosts {
            hash_ms_per_chunk: 1.0,
            publish_ms: 190.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct WriteOutcome {
    pub cid: ContentId,
    pub chunk_count: usize,
    pub total_bytes: u64,
    /// Deterministic extra virtual time beyond the producing read.
    pub overhead_ms: SimMs,
}

/// Serialize a table, pack records into chunks without ever splitting one,
/// index the chunks as a fat Merkle tree and publish with the foreman as the
/// sole initial provider. The returned top hash is the table's new id.
pub fn write_table(
    net: &Network,
    foreman: &PeerId,
    batch: &RecordBatch,
    format: DataFormat,
    chunk_size: usize,
    fanout_k: usize,
    costs: WriteCosts,
    allow_oversize: bool,
) -> Result<WriteOutcome> {
    if chunk_size == 0 {
        return Err(Error::invalid("chunk_size must be >= 1"));
    }
    let mut lines: Vec<String> = Vec::with_capacity(batch.rows.len() + 1);
    if format == DataFormat::Csv {
        lines.push(csv_header_line(&batch.columns));
    }
    for row in &batch.rows {
        lines.push(serialize_row(batch, row, format));
    }

    let mut chunks: Vec<Chunk> = Vec::new();
    let mut current: Vec<u8> = Vec::new();
    for line in &lines {
        let needed = line.len() + 1;
        if needed > chunk_size && !allow_oversize {
            return Err(Error::RecordTooLarge {
                size: needed,
                chunk_size,
            });
        }
        if !current.is_empty() && current.len() + needed > chunk_size {
            chunks.push(Chunk::new(std::mem::take(&mut current)));
        }
        current.extend_from_slice(line.as_bytes());
        current.push(b'\n');
    }
    if !current.is_empty() || chunks.is_empty() {
        chunks.push(Chunk::new(current));
    }

    let tree = build_fat_tree(&chunks, fanout_k)?;
    let placement = PlacementPolicy::Single.assign(&tree.leaves, std::slice::from_ref(foreman));
    let header = (format == DataFormat::Csv).then(|| csv_header_line(&batch.columns));
    net.publish_object(&tree, &chunks, &placement, foreman, header)?;
    Ok(WriteOutcome {
        cid: tree.root,
        chunk_count: chunks.len(),
        total_bytes: chunks.iter().map(|c| c.size() as u64).sum(),
        overhead_ms: costs.hash_ms_per_chunk * chunks.len() as f64 + costs.publish_ms,
    })
}

/// Merge worker partials in fragment order into one result. Row fragments
/// concatenate (schemas merged by name); aggregate fragments merge their
/// accumulators.
pub fn merge_partials(parts: Vec<PartialResult>) -> Result<PartialResult> {
    let mut parts = parts.into_iter();
    let first = parts
        .next()
        .ok_or_else(|| Error::PlanError("no partial results to merge".into()))?;
    match first {
        PartialResult::Rows(mut batch) => {
            for part in parts {
                let PartialResult::Rows(other) = part else {
                    return Err(Error::PlanError("mixed partial result kinds".into()));
                };
                for name in &other.columns {
                    if batch.column_index(name).is_none() {
                        batch.add_column(name.clone());
                    }
                }
                let mapping: Vec<usize> = other
                    .columns
                    .iter()
                    .map(|name| batch.column_index(name).unwrap())
                    .collect();
                for row in &other.rows {
                    let mut merged = vec![Value::Null; batch.columns.len()];
                    for (from, to) in mapping.iter().enumerate() {
                        merged[*to] = row[from].clone();
                    }
                    batch.push_row(merged);
                }
            }
            Ok(PartialResult::Rows(batch))
        }
        PartialResult::Aggregates(mut partial) => {
            for part in parts {
                let PartialResult::Aggregates(other) = part else {
                    return Err(Error::PlanError("mixed partial result kinds".into()));
                };
                partial.merge(&other);
            }
            Ok(PartialResult::Aggregates(partial))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunk(bytes: &str) -> Result<Arc<Chunk>> {
        Ok(Arc::new(Chunk::new(bytes.as_bytes().to_vec())))
    }

    fn csv_spec(columns: &[&str], skip_header: bool) -> ReadSpec {
        ReadSpec {
            format: DataFormat::Csv,
            schema: Some(columns.iter().map(|c| c.to_string()).collect()),
            skip_leading_header: skip_header,
        }
    }

    #[test]
    fn row_straddling_chunk_boundary_is_stitched() {
        let spec = csv_spec(&["a", "b"], true);
        let chunks = vec![chunk("a,b\n1,2\n3,"), chunk("4\n5,6\n")];
        let (batch, rows) = read_records(chunks, &spec).unwrap();
        assert_eq!(rows, 3);
        assert_eq!(
            batch.rows[1],
            vec![Value::Int(3), Value::Int(4)],
            "stitched row"
        );
    }

    #[test]
    fn ndjson_three_rows_integer_schema() {
        let spec = ReadSpec {
            format: DataFormat::Json,
            schema: None,
            skip_leading_header: false,
        };
        let chunks = vec![chunk("{\"a\":1}\n{\"a\":2}\n"), chunk("{\"a\":3}\n")];
        let (batch, rows) = read_records(chunks, &spec).unwrap();
        assert_eq!(rows, 3);
        assert_eq!(batch.columns, vec!["a".to_string()]);
        assert_eq!(batch.types, vec![ColumnType::Integer]);
    }

    #[test]
    fn header_only_in_first_chunk() {
        // Reference: parsing the concatenated file in one piece.
        let full = "x,y\n1,raw\n2,cooked\n3,frozen\n";
        let spec = csv_spec(&["x", "y"], true);
        let (reference, _) = read_records(vec![chunk(full)], &spec).unwrap();

        let pieces = vec![chunk("x,y\n1,raw\n"), chunk("2,cooked\n3,frozen\n")];
        let (split, _) = read_records(pieces, &spec).unwrap();
        assert_eq!(split.rows, reference.rows);
    }

    #[test]
    fn malformed_rows_carry_record_numbers() {
        let spec = csv_spec(&["a", "b"], false);
        let err = read_records(vec![chunk("1,2\n3\n")], &spec).unwrap_err();
        match err {
            Error::RowParse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other}"),
        }

        let spec = ReadSpec {
            format: DataFormat::Json,
            schema: None,
            skip_leading_header: false,
        };
        let err = read_records(vec![chunk("{\"a\":1}\nnot json\n")], &spec).unwrap_err();
        assert!(matches!(err, Error::RowParse { line: 2, .. }));
    }

    #[test]
    fn quoted_csv_fields() {
        let spec = csv_spec(&["a", "b"], false);
        let (batch, _) =
            read_records(vec![chunk("\"x,y\",\"say \"\"hi\"\"\"\n")], &spec).unwrap();
        assert_eq!(
            batch.rows[0],
            vec![
                Value::Text("x,y".into()),
                Value::Text("say \"hi\"".into())
            ]
        );
    }

    #[test]
    fn filter_then_projection() {
        let mut batch = RecordBatch::empty(vec!["a".into(), "b".into()]);
        for i in 1..=10i64 {
            batch.push_row(vec![Value::Int(i), Value::Int(i * 10)]);
        }
        let pushdown = Pushdown {
            projection: Some(vec!["b".into()]),
            predicate: Some(Predicate {
                clauses: vec![Comparison {
                    column: "a".into(),
                    op: CmpOp::Gt,
                    literal: Value::Int(5),
                }],
            }),
            aggregate: None,
        };
        match apply_pushdown(batch, &pushdown).unwrap() {
            PartialResult::Rows(rows) => {
                assert_eq!(rows.rows.len(), 5);
                assert_eq!(rows.columns, vec!["b".to_string()]);
            }
            _ => panic!("expected rows"),
        }
    }

    #[test]
    fn partial_count_over_chunks() {
        let spec = csv_spec(&["v"], false);
        let mut lines = String::new();
        for i in 0..300 {
            lines.push_str(&format!("{i}\n"));
        }
        let thirds: Vec<_> = vec![
            chunk(&lines[..lines.len() / 3]),
            chunk(&lines[lines.len() / 3..2 * lines.len() / 3]),
            chunk(&lines[2 * lines.len() / 3..]),
        ];
        let (batch, rows) = read_records(thirds, &spec).unwrap();
        assert_eq!(rows, 300);
        let pushdown = Pushdown {
            projection: None,
            predicate: None,
            aggregate: Some(AggregateSpec {
                group_by: None,
                aggs: vec![AggFn::CountStar],
            }),
        };
        match apply_pushdown(batch, &pushdown).unwrap() {
            PartialResult::Aggregates(partial) => {
                let states = partial.groups.values().next().unwrap();
                assert_eq!(states[0], AggState::Count(300));
            }
            _ => panic!("expected aggregates"),
        }
    }

    #[test]
    fn aggregate_merge_is_order_independent() {
        let spec = AggregateSpec {
            group_by: Some("g".into()),
            aggs: vec![
                AggFn::CountStar,
                AggFn::Sum("v".into()),
                AggFn::Min("v".into()),
                AggFn::Max("v".into()),
            ],
        };
        let mut batch = RecordBatch::empty(vec!["g".into(), "v".into()]);
        for i in 0..60i64 {
            batch.push_row(vec![Value::Int(i % 3), Value::Int(i)]);
        }
        let mut parts = Vec::new();
        for piece in batch.rows.chunks(17) {
            let mut partial = AggPartial::new(spec.clone());
            for row in piece {
                partial.accumulate_row(&batch, row).unwrap();
            }
            parts.push(partial);
        }
        let mut forward = AggPartial::new(spec.clone());
        for p in &parts {
            forward.merge(p);
        }
        let mut backward = AggPartial::new(spec.clone());
        for p in parts.iter().rev() {
            backward.merge(p);
        }
        assert_eq!(forward.groups, backward.groups);
        let final_batch = forward.finalize();
        assert_eq!(final_batch.rows.len(), 3);
    }

    #[test]
    fn write_packs_whole_records() {
        let net = Network::new(crate::dhtnet::NetworkOptions {
            peer_count: 1,
            latency: crate::dhtnet::LatencyDistribution::constant(1.0).unwrap(),
            ..Default::default()
        })
        .unwrap();
        let foreman = net.peer_ids()[0].clone();
        let mut batch = RecordBatch::empty(vec!["p".into()]);
        for i in 0..10 {
            // 99 digits + newline = 100 bytes per serialized record
            batch.push_row(vec![Value::Text(format!("{i:0>99}"))]);
        }
        let outcome = write_table(
            &net,
            &foreman,
            &batch,
            DataFormat::Json,
            400,
            16,
            WriteCosts::default(),
            false,
        )
        .unwrap();
        // {"p":"000...0"} is 108 bytes + newline; 3 records of 109 fit in 400.
        let store = net.peer(&foreman).unwrap();
        let store = store.store.read().unwrap();
        let mut sizes = Vec::new();
        for cid in store.cids() {
            let chunk = store.get(cid).unwrap();
            assert!(chunk.size() <= 400);
            // No record may span chunks: every chunk ends at a newline.
            assert_eq!(*chunk.bytes.last().unwrap(), b'\n');
            sizes.push(chunk.size());
        }
        assert_eq!(outcome.chunk_count, 4);
        assert_eq!(
            outcome.overhead_ms,
            WriteCosts::default().hash_ms_per_chunk * 4.0 + WriteCosts::default().publish_ms
        );
    }

    #[test]
    fn fixed_width_rows_pack_four_four_two() {
        let net = Network::new(crate::dhtnet::NetworkOptions {
            peer_count: 1,
            latency: crate::dhtnet::LatencyDistribution::constant(1.0).unwrap(),
            ..Default::default()
        })
        .unwrap();
        let foreman = net.peer_ids()[0].clone();
        let mut batch = RecordBatch::empty(vec!["p".into()]);
        for i in 0..10 {
            // serialized json row is exactly 100 bytes with the newline
            batch.push_row(vec![Value::Text(format!("{i:0>91}"))]);
        }
        let line = serialize_row(&batch, &batch.rows[0], DataFormat::Json);
        assert_eq!(line.len() + 1, 100);
        let outcome = write_table(
            &net,
            &foreman,
            &batch,
            DataFormat::Json,
            400,
            16,
            WriteCosts::default(),
            false,
        )
        .unwrap();
        assert_eq!(outcome.chunk_count, 3, "rows pack as [4,4,2]");
    }

    #[test]
    fn oversized_record_rejected_by_default() {
        let net = Network::new(crate::dhtnet::NetworkOptions {
            peer_count: 1,
            latency: crate::dhtnet::LatencyDistribution::constant(1.0).unwrap(),
            ..Default::default()
        })
        .unwrap();
        let foreman = net.peer_ids()[0].clone();
        let mut batch = RecordBatch::empty(vec!["p".into()]);
        batch.push_row(vec![Value::Text("x".repeat(500))]);
        let err = write_table(
            &net,
            &foreman,
            &batch,
            DataFormat::Json,
            64,
            16,
            WriteCosts::default(),
            false,
        )
        .unwrap_err();
        assert!(matches!(err, Error::RecordTooLarge { .. }));
        // Oversize escape hatch keeps the record intact in its own chunk.
        let outcome = write_table(
            &net,
            &foreman,
            &batch,
            DataFormat::Json,
            64,
            16,
            WriteCosts::default(),
            true,
        )
        .unwrap();
        assert_eq!(outcome.chunk_count, 1);
    }

    #[test]
    fn write_read_roundtrip() {
        let net = Network::new(crate::dhtnet::NetworkOptions {
            peer_count: 1,
            latency: crate::dhtnet::LatencyDistribution::constant(1.0).unwrap(),
            ..Default::default()
        })
        .unwrap();
        let foreman = net.peer_ids()[0].clone();
        let mut batch = RecordBatch::empty(vec!["a".into(), "b".into()]);
        batch.push_row(vec![Value::Int(1), Value::Text("x,y".into())]);
        batch.push_row(vec![Value::Float(2.5), Value::Null]);
        batch.push_row(vec![Value::Int(-3), Value::Text("plain".into())]);
        for format in [DataFormat::Csv, DataFormat::Json] {
            let outcome = write_table(
                &net,
                &foreman,
                &batch,
                format,
                32,
                4,
                WriteCosts::default(),
                false,
            )
            .unwrap();
            let record = net
                .peek_record(&crate::dhtnet::RecordKey::Node(outcome.cid))
                .unwrap();
            let leaves = match record {
                crate::dhtnet::RecordValue::Node { children, leaf_children, .. } => {
                    if leaf_children {
                        children
                    } else {
                        children
                            .iter()
                            .flat_map(|m| {
                                match net
                                    .peek_record(&crate::dhtnet::RecordKey::Node(*m))
                                    .unwrap()
                                {
                                    crate::dhtnet::RecordValue::Node { children, .. } => children,
                                    _ => unreachable!(),
                                }
                            })
                            .collect()
                    }
                }
                _ => unreachable!(),
            };
            let peer = net.peer(&foreman).unwrap();
            let store = peer.store.read().unwrap();
            let chunks: Vec<Result<Arc<Chunk>>> =
                leaves.iter().map(|cid| store.get(cid)).collect();
            let spec = ReadSpec {
                format,
                schema: Some(batch.columns.clone()),
                skip_leading_header: format == DataFormat::Csv,
            };
            let (read_back, _) = read_records(chunks, &spec).unwrap();
            let columns_match = match format {
                DataFormat::Csv => read_back.columns == batch.columns,
                DataFormat::Json => {
                    read_back.columns.iter().all(|c| batch.columns.contains(c))
                }
            };
            assert!(columns_match);
            let original = batch.project(&read_back.columns);
            assert_eq!(read_back.rows, original.rows, "format {format:?}");
        }
    }

    #[test]
    fn merge_rows_unions_schemas() {
        let mut a = RecordBatch::empty(vec!["a".into()]);
        a.push_row(vec![Value::Int(1)]);
        let mut b = RecordBatch::empty(vec!["a".into(), "b".into()]);
        b.push_row(vec![Value::Int(2), Value::Text("t".into())]);
        let merged = merge_partials(vec![
            PartialResult::Rows(a),
            PartialResult::Rows(b),
        ])
        .unwrap();
        match merged {
            PartialResult::Rows(batch) => {
                assert_eq!(batch.columns, vec!["a".to_string(), "b".to_string()]);
                assert_eq!(batch.rows[0], vec![Value::Int(1), Value::Null]);
                assert_eq!(batch.rows[1], vec![Value::Int(2), Value::Text("t".into())]);
            }
            _ => panic!("expected rows"),
        }
    }

    #[test]
    fn comparison_semantics() {
        let gt = Comparison {
            column: "a".into(),
            op: CmpOp::Gt,
            literal: Value::Int(5),
        };
        assert!(gt.matches(&Value::Int(6)));
        assert!(gt.matches(&Value::Float(5.5)));
        assert!(!gt.matches(&Value::Int(5)));
        assert!(!gt.matches(&Value::Null));
        assert!(!gt.matches(&Value::Text("10".into())), "no text coercion");
        let ne = Comparison {
            column: "a".into(),
            op: CmpOp::Ne,
            literal: Value::Text("x".into()),
        };
        assert!(ne.matches(&Value::Text("y".into())));
        assert!(!ne.matches(&Value::Null), "null never matches");
    }
}
