use crate::cost::{
    cost_report, geometry_from_network, measure_t_batch, measure_t_l1norm, profile_from_network, CostReport,
    LatencyInput, LayerCost, LayerGeom, SavingsInput,
};
use crate::error::{Error, Result};
use crate::network::Network;

use super::config::RunConfig;

/// Inputs of the savings and latency projections. Savings needs `n` and
/// `m`; latency additionally needs the three timing values, which
/// `measure` can fill in from the configured network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CostOptions {
    /// Images per counted pass.
    pub batch: usize,
    pub n: Option<usize>,
    pub m: Option<usize>,
    /// Fraction; defaults to the schedule's target percentage / 100.
    pub target_rate: Option<f64>,
    pub batches_per_epoch: Option<f64>,
    pub t_batch: Option<f64>,
    pub t_l1norm: Option<f64>,
    pub measure: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostTables {
    pub geoms: Vec<LayerGeom>,
    pub report: CostReport,
    /// `(metric, value)` pairs in output order.
    pub projections: Vec<(String, f64)>,
}

const LAYER_COLUMNS: [&str; 15] = [
    "layer",
    "n",
    "m",
    "k",
    "i",
    "o",
    "s",
    "r",
    "forward_macs",
    "error_macs",
    "dw_macs",
    "input_reads",
    "weight_reads",
    "activation_writes",
    "weight_writes",
];

fn cost_fields(c: &LayerCost) -> [String; 7] {
    [
        c.forward_macs,
        c.error_macs,
        c.dw_macs,
        c.input_reads,
        c.weight_reads,
        c.activation_writes,
        c.weight_writes,
    ]
    .map(|v| v.to_string())
}

impl CostTables {
    /// One row per conv layer followed by a `total` row.
    pub fn layers_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(LAYER_COLUMNS)?;
        for (l, (g, c)) in self.geoms.iter().zip(&self.report.layers).enumerate() {
            let geom = [g.n, g.m, g.k, g.i, g.o, g.s].map(|v| v.to_string());
            w.write_record(
                std::iter::once(format!("conv{l}"))
                    .chain(geom)
                    .chain(std::iter::once(g.r().to_string()))
                    .chain(cost_fields(c)),
            )?;
        }
        w.write_record(
            std::iter::once("total".to_string())
                .chain(std::iter::repeat_n(String::new(), 7))
                .chain(cost_fields(&self.report.total)),
        )?;
        finish(w)
    }

    pub fn projections_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["metric", "value"])?;
        for (k, v) in &self.projections {
            w.write_record([k.as_str(), &v.to_string()])?;
        }
        finish(w)
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Analytic counts for the configured architecture (unpruned) plus the
/// projections the options allow.
pub fn cost_tables(cfg: &RunConfig, opts: &CostOptions) -> Result<CostTables> {
    let input = cfg.dataset.input_shape()?;
    let classes = cfg.dataset.num_classes()?;
    let mut net: Network<f64> = Network::new(input, &cfg.layer_specs()?, classes, cfg.batchnorm, cfg.seed)?;
    let geoms = geometry_from_network(&net)?;
    let report = cost_report(&geoms, &profile_from_network(&net), opts.batch.max(1))?;

    let mut projections: Vec<(String, f64)> = vec![
        ("dense_forward_macs".into(), report.total.forward_macs),
        ("dense_training_macs".into(), report.total.total_macs()),
    ];

    let (mut t_batch, mut t_l1norm) = (opts.t_batch, opts.t_l1norm);
    if opts.measure {
        let l1 = measure_t_l1norm(&net, 7).as_secs_f64();
        let fwd = measure_t_batch(&mut net, 64, 7)?.as_secs_f64();
        projections.push(("measured_t_l1norm_seconds".into(), l1));
        projections.push(("measured_t_forward_batch64_seconds".into(), fwd));
        projections.push(("l1norm_faster_than_forward".into(), if l1 < fwd { 1.0 } else { 0.0 }));
        t_l1norm = t_l1norm.or(Some(l1));
        t_batch = t_batch.or(Some(fwd));
    }

    match (opts.n, opts.m) {
        (Some(n), Some(m)) => {
            let target_rate = opts.target_rate.unwrap_or(cfg.schedule.target_prune_perc / 100.0);
            let x = report.total.total_macs().max(1.0);
            let savings = SavingsInput { n, m, target_rate, x }.savings()?;
            projections.push(("target_rate".into(), target_rate));
            projections.push(("savings".into(), savings));
            match (opts.batches_per_epoch, t_batch, t_l1norm) {
                (Some(b), Some(t_b), Some(t_l1norm)) => {
                    let lat = LatencyInput {
                        n: n as f64,
                        m: m as f64,
                        b,
                        t_b,
                        t_l1norm,
                    };
                    let (pwt, prt) = (lat.latency_pwt()?, lat.latency_prt()?);
                    projections.push(("latency_pwt_seconds".into(), pwt));
                    projections.push(("latency_prt_seconds".into(), prt));
                    projections.push(("latency_prt_minus_pwt_seconds".into(), prt - pwt));
                }
                (b, t_b, t_l) => {
                    if opts.batches_per_epoch.is_some() || opts.t_batch.is_some() || opts.t_l1norm.is_some() {
                        let missing: Vec<&str> = [("batches", b), ("t-batch", t_b), ("t-l1norm", t_l)]
                            .iter()
                            .filter(|(_, v)| v.is_none())
                            .map(|(name, _)| *name)
                            .collect();
                        return Err(Error::InvalidArgument(format!(
                            "latency projection is missing: {}",
                            missing.join(", ")
                        )));
                    }
                }
            }
        }
        (None, None) => {
            if opts.target_rate.is_some() || opts.batches_per_epoch.is_some() {
                return Err(Error::InvalidArgument("projections need both n and m".into()));
            }
        }
        _ => return Err(Error::InvalidArgument("projections need both n and m".into())),
    }

    Ok(CostTables {
        geoms,
        report,
        projections,
    })
}
