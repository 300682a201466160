//! `params` subcommand: parameter counts of one aggregation function
//! under both conventions.

use treetensor::agg::{param_count, AggregatorKind, AggregatorSpec, CountConvention};

use crate::config::CliError;
use crate::opts::ParamsArgs;

pub fn run(args: &ParamsArgs) -> Result<(), CliError> {
    let kind: AggregatorKind = args.aggregator.parse().map_err(CliError::Usage)?;
    let spec = AggregatorSpec::new(kind, args.c, args.outdegree, args.label_dim, args.r)
        .map_err(CliError::Usage)?;
    println!(
        "aggregator={} c={} L={} m={}{}",
        kind.name(),
        args.c,
        args.outdegree,
        args.label_dim,
        args.r.map(|r| format!(" r={r}")).unwrap_or_default()
    );
    println!(
        "paper-table: {}",
        param_count(&spec, CountConvention::PaperTable)
    );
    println!(
        "all-scalars: {}",
        param_count(&spec, CountConvention::AllScalars)
    );
    Ok(())
}
