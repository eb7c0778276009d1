//! Query front end: the SQL-subset parser, the planner, and foreman-side
//! result assembly.

pub mod parser;
pub mod plan;

pub use parser::{parse_query, IpfsPath, ProjItem, Projection, QueryAst, QueryKind, SourceRef};
pub use plan::{
    build_pushdown, build_subscans, render_table, Catalog, CatalogEntry, MergeSpec, QueryPlan,
    QueryStats, Session,
};
