//! Foreman-side planning and execution.
//!
//! A query runs in two stages, timed separately: plan generation (flatten,
//! provider selection, address resolution) and plan execution (subscans on
//! the workers, merge at the foreman, plus the write-back for CTAS).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cache::MinervaCache;
use crate::chunkstore::{chunk_bytes, ContentId};
use crate::config::Config;
use crate::coordinator::{
    flatten_hashes, gpr_applicable, gpr_resolve, resolve_providers, select_providers, Assignment,
    FlattenResult,
};
use crate::dhtnet::{pool_makespan, Network, PeerId, RecordKey, RecordValue, SimMs};
use crate::error::{Error, Result};
use crate::executor::{
    apply_pushdown, assemble_boundary_records, execute_subscan, fetch_raw, merge_partials,
    parse_boundary_records, parse_header_fields, scan_fragment, write_table, AggregateSpec,
    BoundaryPiece, DataFormat, PartialResult, Pushdown, ReadSpec, RecordBatch, SubScan,
};
use crate::merkle::{build_fat_tree, build_standard_tree, TreeShape};
use crate::queryfront::parser::{
    parse_query, ProjItem, Projection, QueryAst, QueryKind, SourceRef,
};

/// Name -> object binding. CTAS entries persist through the catalog file,
/// CTTAS entries live for the session only.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub cid: ContentId,
    pub format: DataFormat,
}

#[derive(Default)]
pub struct Catalog {
    path: Option<PathBuf>,
    persistent: BTreeMap<String, CatalogEntry>,
    session: BTreeMap<String, CatalogEntry>,
}

impl Catalog {
    pub fn in_memory() -> Self {
        Catalog::default()
    }

    pub fn open(path: PathBuf) -> Result<Self> {
        let persistent = if path.exists() {
            let text = std::fs::read_to_string(&path)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("catalog {path:?}: {e}")))?
        } else {
            BTreeMap::new()
        };
        Ok(Catalog {
            path: Some(path),
            persistent,
            session: BTreeMap::new(),
        })
    }

    pub fn resolve(&self, name: &str) -> Option<&CatalogEntry> {
        self.session.get(name).or_else(|| self.persistent.get(name))
    }

    pub fn register(&mut self, name: String, entry: CatalogEntry, temporary: bool) -> Result<()> {
        if temporary {
            self.session.insert(name, entry);
            return Ok(());
        }
        self.persistent.insert(name, entry);
        if let Some(path) = &self.path {
            let text = serde_json::to_string_pretty(&self.persistent)
                .map_err(|e| Error::Config(e.to_string()))?;
            std::fs::write(path, text)?;
        }
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = (&String, &CatalogEntry)> {
        self.persistent.iter().chain(self.session.iter())
    }
}

/// Final merge work the foreman performs after gathering partials.
#[derive(Clone, Debug)]
pub struct MergeSpec {
    /// Output column order; `None` keeps the merged natural order.
    pub output: Option<Vec<String>>,
    pub aggregate: Option<AggregateSpec>,
    pub limit: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct QueryPlan {
    pub source_cid: ContentId,
    pub format: DataFormat,
    pub flatten: FlattenResult,
    pub assignment: Assignment,
    pub subscans: Vec<SubScan>,
    pub merge: MergeSpec,
    pub plan_elapsed: SimMs,
    pub gpr_central: bool,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct QueryStats {
    pub plan_ms: SimMs,
    pub exec_ms: SimMs,
    pub total_ms: SimMs,
    pub dht_lookups: u64,
    pub bytes_shipped: u64,
    pub rows_returned: u64,
    pub rows_scanned: u64,
    pub new_cid: Option<ContentId>,
}

/// One foreman with its caches, catalog and configuration against a shared
/// network. Queries run one at a time in virtual-time mode.
pub struct Session {
    pub net: Arc<Network>,
    pub cache: MinervaCache,
    pub catalog: Catalog,
    pub config: Config,
    pub foreman: PeerId,
}

impl Session {
    pub fn new(net: Arc<Network>, config: Config) -> Session {
        let foreman = net.peer_ids()[0].clone();
        let cache = MinervaCache::new(config.cache_mode, config.cache);
        Session {
            net,
            cache,
            catalog: Catalog::in_memory(),
            config,
            foreman,
        }
    }

    pub fn with_foreman(mut self, foreman: PeerId) -> Session {
        self.foreman = foreman;
        self
    }

    /// Chunk, index and publish raw object bytes under the session's
    /// placement policy; returns the new top id.
    pub fn put_bytes(
        &self,
        data: &[u8],
        format: DataFormat,
        shape: TreeShape,
    ) -> Result<ContentId> {
        let chunks = chunk_bytes(data, self.config.chunk_size)?;
        let tree = match shape {
            TreeShape::Standard => build_standard_tree(&chunks, self.config.fanout)?,
            TreeShape::Fat => build_fat_tree(&chunks, self.config.fanout)?,
        };
        let peers = self.net.peer_ids().to_vec();
        let placement = self.config.placement.assign(&tree.leaves, &peers);
        let header = (format == DataFormat::Csv).then(|| {
            let end = data
                .iter()
                .position(|b| *b == b'\n')
                .unwrap_or(data.len());
            String::from_utf8_lossy(&data[..end]).trim_end_matches('\r').to_string()
        });
        self.net
            .publish_object(&tree, &chunks, &placement, &self.foreman, header)?;
        Ok(tree.root)
    }

    /// Parse, plan and execute one statement.
    pub fn run_query(&mut self, text: &str) -> Result<(RecordBatch, QueryStats)> {
        let ast = parse_query(text)?;
        self.run_ast(ast)
    }

    pub fn plan_query(&mut self, ast: &QueryAst) -> Result<QueryPlan> {
        let start = self.net.now();
        self.plan_at(ast, start)
    }

    fn resolve_source(&self, ast: &QueryAst) -> Result<(ContentId, DataFormat)> {
        match &ast.source {
            SourceRef::Path(path) => Ok((path.top_cid, path.format)),
            SourceRef::Named(name) => {
                let entry = self.catalog.resolve(name).ok_or_else(|| {
                    Error::Path(format!("table name {name:?} not in catalog"))
                })?;
                Ok((entry.cid, entry.format))
            }
        }
    }

    fn plan_at(&mut self, ast: &QueryAst, start: SimMs) -> Result<QueryPlan> {
        let (source_cid, format) = self.resolve_source(ast).map_err(|e| e.at_stage("plan"))?;
        let mut elapsed = 0.0;

        let hash = flatten_hashes(&self.net, &self.cache, &source_cid, start)
            .map_err(|e| e.at_stage("plan"))?;
        elapsed += hash.elapsed;

        let params = self.config.selection;
        let (flatten, assignment, gpr_central) = if gpr_applicable(&self.config.gpr, &hash) {
            let resolution = gpr_resolve(
                &self.net,
                &self.cache,
                &self.config.gpr,
                &hash,
                params,
                Some(&self.foreman),
                start,
            )
            .map_err(|e| e.at_stage("plan"))?;
            elapsed += resolution.elapsed;
            let flatten = FlattenResult {
                leaves: hash.leaves.clone(),
                providers: resolution.providers.clone(),
                rounds: hash.rounds + resolution.provider_rounds,
                lookups: hash.lookups + resolution.provider_lookups,
                elapsed: hash.elapsed + resolution.elapsed,
                hash_elapsed: hash.elapsed,
                provider_elapsed: resolution.elapsed,
                root_meta: hash.root_meta.clone(),
                top_host: hash.top_host.clone(),
                fully_cached: false,
            };
            (flatten, resolution.assignment, resolution.central_hit)
        } else {
            let (providers, provider_elapsed, provider_lookups, provider_rounds) =
                resolve_providers(&self.net, &hash).map_err(|e| e.at_stage("plan"))?;
            let fully_cached = hash.fully_cached && provider_lookups == 0;
            if !fully_cached {
                self.cache.meta_put(
                    source_cid,
                    crate::cache::MetaEntry {
                        leaves: hash.leaves.clone(),
                        providers: providers.clone(),
                        meta: hash.root_meta.clone(),
                    },
                    start + elapsed + provider_elapsed,
                );
            }
            elapsed += provider_elapsed;
            let flatten = FlattenResult {
                leaves: hash.leaves.clone(),
                providers,
                rounds: hash.rounds + provider_rounds,
                lookups: hash.lookups + provider_lookups,
                elapsed: hash.elapsed + provider_elapsed,
                hash_elapsed: hash.elapsed,
                provider_elapsed,
                root_meta: hash.root_meta.clone(),
                top_host: hash.top_host.clone(),
                fully_cached,
            };
            let assignment =
                select_providers(&self.net, &flatten, params, Some(&self.foreman))
                    .map_err(|e| e.at_stage("plan"))?;
            elapsed += assignment.elapsed;
            (flatten, assignment, false)
        };

        elapsed += self.resolve_addresses(&assignment, start + elapsed);

        let schema = match format {
            DataFormat::Csv => {
                let meta = flatten
                    .root_meta
                    .as_ref()
                    .and_then(|m| m.csv_header.as_ref())
                    .ok_or_else(|| {
                        Error::Format("csv object carries no header metadata".into())
                    })
                    .map_err(|e| e.at_stage("plan"))?;
                Some(parse_header_fields(meta))
            }
            DataFormat::Json => None,
        };

        let (pushdown, merge) = build_pushdown(ast, schema.as_deref())?;
        let positions: Vec<usize> = (0..flatten.leaves.len()).collect();
        let subscans = build_subscans(
            &flatten.leaves,
            &positions,
            flatten.leaves.len(),
            &assignment,
            format,
            schema.clone(),
            &pushdown,
        );

        Ok(QueryPlan {
            source_cid,
            format,
            flatten,
            assignment,
            subscans,
            merge,
            plan_elapsed: elapsed,
            gpr_central,
        })
    }

    /// Resolve network addresses of every remote peer the plan touches,
    /// through the peer-address cache; one parallel round for the misses.
    fn resolve_addresses(&self, assignment: &Assignment, now: SimMs) -> SimMs {
        let mut missing = Vec::new();
        for peer in assignment.workload.keys() {
            if *peer == self.foreman {
                continue;
            }
            if self.cache.peer_get(peer, now).is_none() {
                missing.push(peer.clone());
            }
        }
        if missing.is_empty() {
            return 0.0;
        }
        let keys: Vec<RecordKey> = missing
            .iter()
            .map(|p| RecordKey::PeerAddr(p.clone()))
            .collect();
        let (records, elapsed) = self.net.dht_lookup_batch(&keys);
        for (peer, record) in missing.into_iter().zip(records) {
            if let Some(RecordValue::Address(address)) = record.map(|r| r.value) {
                self.cache.peer_put(peer, address, now + elapsed);
            }
        }
        elapsed
    }

    pub fn run_ast(&mut self, ast: QueryAst) -> Result<(RecordBatch, QueryStats)> {
        let start = self.net.now();
        let lookups_before = self.net.lookup_count();
        let plan = self.plan_at(&ast, start)?;

        let exec = self
            .execute_plan(&plan, start + plan.plan_elapsed)
            .map_err(|e| e.at_stage("execute"))?;
        let mut exec_elapsed = exec.elapsed;
        let mut bytes_shipped = exec.bytes_shipped;

        let merged = exec.merged;
        let mut batch = match (merged, &plan.merge.aggregate) {
            (PartialResult::Aggregates(partial), _) => partial.finalize(),
            (PartialResult::Rows(batch), None) => batch,
            (PartialResult::Rows(_), Some(_)) => {
                return Err(Error::PlanError("aggregate plan returned raw rows".into()))
            }
        };
        if let Some(output) = &plan.merge.output {
            batch = batch.project(output);
        }
        if let Some(limit) = plan.merge.limit {
            batch.rows.truncate(limit);
        }

        let mut new_cid = None;
        match &ast.kind {
            QueryKind::Select => {}
            QueryKind::CreateTableAs { name } | QueryKind::CreateTempTableAs { name } => {
                let outcome = write_table(
                    &self.net,
                    &self.foreman,
                    &batch,
                    plan.format,
                    self.config.chunk_size,
                    self.config.fanout,
                    self.config.write_costs,
                    self.config.allow_oversize,
                )
                .map_err(|e| e.at_stage("write"))?;
                exec_elapsed += outcome.overhead_ms;
                bytes_shipped += 0; // the copy stays on the foreman
                let temporary = matches!(ast.kind, QueryKind::CreateTempTableAs { .. });
                self.catalog
                    .register(
                        name.clone(),
                        CatalogEntry {
                            cid: outcome.cid,
                            format: plan.format,
                        },
                        temporary,
                    )
                    .map_err(|e| e.at_stage("write"))?;
                new_cid = Some(outcome.cid);
            }
        }

        let stats = QueryStats {
            plan_ms: plan.plan_elapsed,
            exec_ms: exec_elapsed,
            total_ms: plan.plan_elapsed + exec_elapsed,
            dht_lookups: self.net.lookup_count() - lookups_before,
            bytes_shipped,
            rows_returned: batch.rows.len() as u64,
            rows_scanned: exec.rows_scanned,
            new_cid,
        };
        self.net.advance_to(start + stats.total_ms);
        Ok((batch, stats))
    }

    fn execute_plan(&self, plan: &QueryPlan, now: SimMs) -> Result<ExecOutcome> {
        let mut partials: Vec<PartialResult> = Vec::new();
        let mut task_times: Vec<SimMs> = Vec::new();
        let mut bytes_shipped = 0u64;
        let mut rows_scanned = 0u64;
        let mut pieces: Vec<BoundaryPiece> = Vec::new();
        for scan in &plan.subscans {
            let mut outcome = self.dispatch(scan, &mut BTreeSet::new(), 0, now)?;
            partials.push(outcome.partial);
            task_times.push(outcome.elapsed);
            bytes_shipped += outcome.bytes_shipped;
            rows_scanned += outcome.rows_scanned;
            pieces.append(&mut outcome.pieces);
        }
        let mut elapsed = pool_makespan(&task_times, 0);

        // Records that straddled fragment boundaries are stitched and
        // evaluated here, after the parallel phase.
        if !pieces.is_empty() {
            let object_chunks = plan.flatten.leaves.len();
            let records = assemble_boundary_records(pieces, object_chunks)?;
            if !records.is_empty() {
                let spec = ReadSpec {
                    format: plan.format,
                    schema: plan.subscans[0].schema.clone(),
                    skip_leading_header: false,
                };
                let (batch, rows) = parse_boundary_records(&records, &spec)?;
                let pushdown = &plan.subscans[0].pushdown;
                partials.push(apply_pushdown(batch, pushdown)?);
                rows_scanned += rows;
                let foreman = self.net.peer(&self.foreman)?;
                elapsed += rows as f64 * foreman.compute_cost_ms_per_row;
            }
        }

        let merged = merge_partials(partials)?;
        Ok(ExecOutcome {
            merged,
            elapsed,
            bytes_shipped,
            rows_scanned,
        })
    }

    /// Run one fragment, falling back on stale assignments: a connect
    /// failure costs the timeout, invalidates the cached address, refreshes
    /// providers for the affected leaves and reselects.
    fn dispatch(
        &self,
        scan: &SubScan,
        excluded: &mut BTreeSet<PeerId>,
        depth: u32,
        now: SimMs,
    ) -> Result<TaskOutcome> {
        if depth > 3 {
            return Err(Error::QueryFailure {
                stage: "execute".into(),
                message: "no reachable provider after repeated reselection".into(),
            });
        }
        match self.try_subscan(scan) {
            Ok(outcome) => Ok(outcome),
            Err(Error::TransferFailure(_)) | Err(Error::NotFound(_)) => {
                let failure_cost = self.net.connect_timeout_ms;
                excluded.insert(scan.target_peer.clone());
                self.cache.invalidate_peer(&scan.target_peer);

                // Fresh provider round for the affected leaves.
                let mut distinct: Vec<ContentId> = Vec::new();
                let mut seen = HashSet::new();
                for leaf in &scan.leaf_cids {
                    if seen.insert(*leaf) {
                        distinct.push(*leaf);
                    }
                }
                let keys: Vec<RecordKey> =
                    distinct.iter().map(|c| RecordKey::Providers(*c)).collect();
                let (records, provider_phase) = self.net.dht_lookup_batch(&keys);
                let mut providers = std::collections::HashMap::new();
                for (leaf, record) in distinct.iter().zip(records) {
                    match record.map(|r| r.value) {
                        Some(RecordValue::Providers(list)) => {
                            let remaining: Vec<PeerId> = list
                                .into_iter()
                                .filter(|p| !excluded.contains(p))
                                .collect();
                            if remaining.is_empty() {
                                return Err(Error::QueryFailure {
                                    stage: "execute".into(),
                                    message: format!("leaf {leaf} has no reachable provider"),
                                });
                            }
                            providers.insert(*leaf, remaining);
                        }
                        _ => {
                            return Err(Error::FlattenFailure {
                                cid: leaf.to_string(),
                            })
                        }
                    }
                }
                let sub_flatten = FlattenResult {
                    leaves: scan.leaf_cids.clone(),
                    providers,
                    rounds: 1,
                    lookups: distinct.len() as u64,
                    elapsed: provider_phase,
                    hash_elapsed: 0.0,
                    provider_elapsed: provider_phase,
                    root_meta: None,
                    top_host: None,
                    fully_cached: false,
                };
                let assignment = select_providers(
                    &self.net,
                    &sub_flatten,
                    self.config.selection,
                    Some(&self.foreman),
                )?;
                let retry_base = failure_cost + provider_phase + assignment.elapsed;
                let address_phase = self.resolve_addresses(&assignment, now + retry_base);

                let replacement = build_subscans(
                    &sub_flatten.leaves,
                    &scan.positions,
                    scan.object_chunks,
                    &assignment,
                    scan.format,
                    scan.schema.clone(),
                    &scan.pushdown,
                );
                let mut partials = Vec::new();
                let mut times = Vec::new();
                let mut bytes = 0u64;
                let mut rows = 0u64;
                let mut pieces = Vec::new();
                for piece in &replacement {
                    let mut outcome =
                        self.dispatch(piece, excluded, depth + 1, now + retry_base + address_phase)?;
                    partials.push(outcome.partial);
                    times.push(outcome.elapsed);
                    bytes += outcome.bytes_shipped;
                    rows += outcome.rows_scanned;
                    pieces.append(&mut outcome.pieces);
                }
                Ok(TaskOutcome {
                    partial: merge_partials(partials)?,
                    elapsed: retry_base + address_phase + pool_makespan(&times, 0),
                    bytes_shipped: bytes,
                    rows_scanned: rows,
                    pieces,
                })
            }
            Err(other) => Err(other),
        }
    }

    fn try_subscan(&self, scan: &SubScan) -> Result<TaskOutcome> {
        let peer = self.net.peer(&scan.target_peer)?;
        if peer.has_executor {
            let (partial, stats, pieces) = execute_subscan(&self.net, &self.foreman, scan)?;
            let remote = scan.target_peer != self.foreman;
            Ok(TaskOutcome {
                partial,
                elapsed: stats.elapsed(),
                bytes_shipped: if remote { stats.result_bytes } else { 0 },
                rows_scanned: stats.rows_scanned,
                pieces,
            })
        } else {
            // No executor on the provider: ship raw chunks to the foreman
            // and compute locally. The same fragment rules apply; the
            // foreman is just the one doing the scanning.
            let (chunks, raw_bytes, transfer_ms) =
                fetch_raw(&self.net, &scan.target_peer, &scan.leaf_cids)?;
            let spec = ReadSpec {
                format: scan.format,
                schema: scan.schema.clone(),
                skip_leading_header: scan.skip_leading_header,
            };
            let positioned: Vec<(usize, std::sync::Arc<crate::chunkstore::Chunk>)> = scan
                .positions
                .iter()
                .copied()
                .zip(chunks)
                .collect();
            let scanned = scan_fragment(&positioned, scan.object_chunks, &spec)?;
            let partial = apply_pushdown(scanned.batch, &scan.pushdown)?;
            let foreman = self.net.peer(&self.foreman)?;
            Ok(TaskOutcome {
                partial,
                elapsed: transfer_ms
                    + scanned.rows_scanned as f64 * foreman.compute_cost_ms_per_row,
                bytes_shipped: raw_bytes,
                rows_scanned: scanned.rows_scanned,
                pieces: scanned.pieces,
            })
        }
    }
}

struct ExecOutcome {
    merged: PartialResult,
    elapsed: SimMs,
    bytes_shipped: u64,
    rows_scanned: u64,
}

struct TaskOutcome {
    partial: PartialResult,
    elapsed: SimMs,
    bytes_shipped: u64,
    rows_scanned: u64,
    pieces: Vec<BoundaryPiece>,
}

/// Derive the worker pushdown and the foreman merge from the AST; column
/// references are validated against the schema when one is known.
pub fn build_pushdown(
    ast: &QueryAst,
    schema: Option<&[String]>,
) -> Result<(Pushdown, MergeSpec)> {
    let check = |column: &str| -> Result<()> {
        if let Some(schema) = schema {
            if !schema.iter().any(|c| c == column) {
                return Err(Error::PlanError(format!(
                    "unknown column {column:?} in pushdown"
                )));
            }
        }
        Ok(())
    };

    if let Some(predicate) = &ast.predicate {
        for clause in &predicate.clauses {
            check(&clause.column)?;
        }
    }
    if let Some(group) = &ast.group_by {
        check(group)?;
    }

    let mut aggs = Vec::new();
    let mut plain = Vec::new();
    let mut output = Vec::new();
    match &ast.projection {
        Projection::Star => {
            if ast.group_by.is_some() {
                return Err(Error::PlanError(
                    "select * cannot be combined with group by".into(),
                ));
            }
        }
        Projection::Items(items) => {
            for item in items {
                match item {
                    ProjItem::Column(name) => {
                        check(name)?;
                        plain.push(name.clone());
                        output.push(name.clone());
                    }
                    ProjItem::Aggregate(f) => {
                        if let Some(column) = f.column() {
                            check(column)?;
                        }
                        output.push(f.label());
                        aggs.push(f.clone());
                    }
                }
            }
        }
    }

    let aggregating = !aggs.is_empty() || ast.group_by.is_some();
    if aggregating {
        for name in &plain {
            if ast.group_by.as_deref() != Some(name.as_str()) {
                return Err(Error::PlanError(format!(
                    "column {name:?} must appear in group by"
                )));
            }
        }
        let spec = AggregateSpec {
            group_by: ast.group_by.clone(),
            aggs,
        };
        Ok((
            Pushdown {
                projection: None,
                predicate: ast.predicate.clone(),
                aggregate: Some(spec.clone()),
            },
            MergeSpec {
                output: Some(output),
                aggregate: Some(spec),
                limit: ast.limit,
            },
        ))
    } else {
        let projection = match &ast.projection {
            Projection::Star => None,
            Projection::Items(_) => Some(plain.clone()),
        };
        Ok((
            Pushdown {
                projection: projection.clone(),
                predicate: ast.predicate.clone(),
                aggregate: None,
            },
            MergeSpec {
                output: projection,
                aggregate: None,
                limit: ast.limit,
            },
        ))
    }
}

/// Group an assignment into one fragment per worker, fragments ordered by
/// their first leaf position and leaves in object order within each.
/// `positions` carries the object position of every entry of `leaves`.
pub fn build_subscans(
    leaves: &[ContentId],
    positions: &[usize],
    object_chunks: usize,
    assignment: &Assignment,
    format: DataFormat,
    schema: Option<Vec<String>>,
    pushdown: &Pushdown,
) -> Vec<SubScan> {
    debug_assert_eq!(leaves.len(), positions.len());
    let mut by_peer: BTreeMap<PeerId, (Vec<ContentId>, Vec<usize>)> = BTreeMap::new();
    let mut order: Vec<PeerId> = Vec::new();
    for (leaf, position) in leaves.iter().zip(positions) {
        let peer = assignment
            .chosen
            .get(leaf)
            .expect("assignment covers every leaf")
            .clone();
        if !by_peer.contains_key(&peer) {
            order.push(peer.clone());
        }
        let entry = by_peer.entry(peer).or_default();
        entry.0.push(*leaf);
        entry.1.push(*position);
    }
    order
        .into_iter()
        .map(|peer| {
            let (leaf_cids, positions) = by_peer.remove(&peer).unwrap();
            let skip_leading_header =
                format == DataFormat::Csv && positions.first() == Some(&0);
            SubScan {
                target_peer: peer,
                leaf_cids,
                positions,
                object_chunks,
                format,
                schema: schema.clone(),
                skip_leading_header,
                pushdown: pushdown.clone(),
            }
        })
        .collect()
}

/// Render a batch as an aligned text table for the CLI.
pub fn render_table(batch: &RecordBatch) -> String {
    let mut widths: Vec<usize> = batch.columns.iter().map(|c| c.len()).collect();
    let rendered: Vec<Vec<String>> = batch
        .rows
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(i, v)| {
                    let text = v.render_csv();
                    widths[i] = widths[i].max(text.len());
                    text
                })
                .collect()
        })
        .collect();
    let mut out = String::new();
    for (i, column) in batch.columns.iter().enumerate() {
        if i > 0 {
            out.push_str(" | ");
        }
        out.push_str(&format!("{column:<width$}", width = widths[i]));
    }
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 3 * widths.len().saturating_sub(1)));
    out.push('\n');
    for row in rendered {
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                out.push_str(" | ");
            }
            out.push_str(&format!("{cell:<width$}", width = widths[i]));
        }
        out.push('\n');
    }
    out
}
