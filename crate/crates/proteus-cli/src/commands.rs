use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context};
use proteus::config::RunConfig;
use proteus::design::{self, DesignError, StaticDesign};
use proteus::link::{self, LinkError};
use proteus::metrics;
use proteus::rules::{self, PairIdMap, RuleTable};
use proteus::sim::{self, Network, Policy, PolicyKind, ProteusRules, SimReport};
use proteus::traffic::{self, FlitRequest, TrafficKind};
use serde_json::json;

use crate::output::{write_atomic, write_json};
use crate::{config_err, runtime_err, CmdResult, Ctx, Failure};

fn design_failure(e: DesignError) -> Failure {
    match e {
        DesignError::InvalidSpace(_) => config_err(e),
        DesignError::Link(LinkError::DegenerateModulation(_)) => config_err(e),
        DesignError::Infeasible { .. } => Failure::Infeasible(e.into()),
        _ => Failure::Infeasible(anyhow!("link infeasible: {e}")),
    }
}

pub fn penalty_sweep(ctx: &Ctx, cfg: &RunConfig, br_list: Option<Vec<f64>>, out: Option<&Path>) -> CmdResult {
    let brs = br_list.unwrap_or_else(|| cfg.search.br_set_gbps.clone());
    if brs.iter().any(|b| b.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)) {
        return Err(config_err(anyhow!("--br-list values must be positive")));
    }
    let models = &cfg.link.models;
    let mut csv = String::from("br_gbps,q,fil_xtalk_db,total_pp_db\n");
    for &br in &brs {
        for &q in &cfg.search.q_grid {
            let link_cfg = cfg.link.carrier.with_q_br(q, br);
            let fil = link::filter_crosstalk_penalty(&link_cfg, &models.filter, link_cfg.worst_channel()).ok();
            let total = link::worst_channel_penalty(&link_cfg, models).ok().map(|p| p.total_db);
            let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let _ = writeln!(csv, "{br},{q},{},{}", cell(fil), cell(total));
        }
    }
    match out {
        Some(path) => {
            write_atomic(path, csv.as_bytes()).map_err(runtime_err)?;
            ctx.progress(format!("wrote {}", path.display()));
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn network(cfg: &RunConfig) -> Result<Network, Failure> {
    cfg.network().map_err(config_err)
}

fn build_design(cfg: &RunConfig, net: &Network) -> Result<StaticDesign, Failure> {
    design::build_static_design(&net.il, &cfg.search, &cfg.link.carrier, &cfg.link.models).map_err(design_failure)
}

fn load_design(cfg: &RunConfig, net: &Network, path: Option<&Path>) -> Result<StaticDesign, Failure> {
    let Some(path) = path else { return build_design(cfg, net) };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(config_err)?;
    let design: StaticDesign =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display())).map_err(config_err)?;
    if design.n_lambda != cfg.system.n_lambda {
        return Err(config_err(anyhow!(
            "{} was made for {} carriers, config has {}",
            path.display(),
            design.n_lambda,
            cfg.system.n_lambda
        )));
    }
    Ok(design)
}

pub fn design(ctx: &Ctx, cfg: &RunConfig, dir: &Path) -> CmdResult {
    let net = network(cfg)?;
    ctx.progress(format!("IL range {:.2} .. {:.2} dB", net.il.min_entry(), net.il.max_entry()));
    let d = build_design(cfg, &net)?;
    write_json(&dir.join("design.json"), &d).map_err(runtime_err)?;
    write_atomic(&dir.join("design_sweep.csv"), d.to_sweep_csv().as_bytes()).map_err(runtime_err)?;
    println!("static P_laser: {:.1} dBm", d.p_laser_dbm);
    ctx.progress(format!("wrote {} design points to {}", d.per_il_points.len(), dir.display()));
    Ok(())
}

fn table_name(gi: usize) -> String {
    format!("gi_{gi:02}")
}

pub fn rules(ctx: &Ctx, cfg: &RunConfig, design_path: Option<&Path>, dir: &Path) -> CmdResult {
    let net = network(cfg)?;
    let d = load_design(cfg, &net, design_path)?;
    let pair_map = PairIdMap::lexicographic(net.il.n_gis());
    let tables = rules::build_rule_tables(&d, &net.il, &pair_map, &cfg.search).map_err(runtime_err)?;
    for t in &tables {
        let name = table_name(usize::from(t.gi_id));
        let bytes = t.to_bytes().map_err(runtime_err)?;
        write_atomic(&dir.join(format!("{name}.bin")), &bytes).map_err(runtime_err)?;
        write_json(&dir.join(format!("{name}.json")), &t.to_json(&cfg.search)).map_err(runtime_err)?;
    }
    ctx.progress(format!("wrote {} rule tables to {}", tables.len(), dir.display()));
    Ok(())
}

fn load_tables(dir: &Path, n_gis: usize) -> Result<Vec<RuleTable>, Failure> {
    (0..n_gis)
        .map(|gi| {
            let path = dir.join(format!("{}.bin", table_name(gi)));
            let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display())).map_err(config_err)?;
            let table = RuleTable::from_bytes(&bytes).with_context(|| path.display().to_string()).map_err(config_err)?;
            if usize::from(table.gi_id) != gi {
                return Err(config_err(anyhow!("{} belongs to GI {}", path.display(), table.gi_id)));
            }
            Ok(table)
        })
        .collect()
}

fn proteus_rules(
    cfg: &RunConfig,
    net: &Network,
    design_path: Option<&Path>,
    rules_dir: Option<&Path>,
) -> Result<ProteusRules, Failure> {
    let d = load_design(cfg, net, design_path)?;
    let pair_map = PairIdMap::lexicographic(net.il.n_gis());
    let tables = match rules_dir {
        Some(dir) => load_tables(dir, net.il.n_gis())?,
        None => rules::build_rule_tables(&d, &net.il, &pair_map, &cfg.search).map_err(runtime_err)?,
    };
    Ok(ProteusRules { design: d, tables, pair_map, space: cfg.search.clone() })
}

fn requests(cfg: &RunConfig) -> Result<Vec<FlitRequest>, Failure> {
    let dims = cfg.system.dims();
    if cfg.traffic.kind == TrafficKind::Trace {
        let path = cfg.traffic.trace_path.as_deref().expect("validated");
        Ok(traffic::read_trace(path, &dims).map_err(config_err)?.requests)
    } else {
        Ok(traffic::generate(&cfg.traffic, &dims).map_err(config_err)?.collect())
    }
}

fn run_policy(
    cfg: &RunConfig,
    kind: PolicyKind,
    rules: Option<&ProteusRules>,
    net: &Network,
    reqs: &[FlitRequest],
) -> Result<SimReport, Failure> {
    let policy = match kind {
        PolicyKind::Proteus => Policy::Proteus(rules.expect("rules built for proteus")),
        PolicyKind::Opa => Policy::Opa,
        PolicyKind::Abm => Policy::Abm,
        PolicyKind::StaticBaseline => Policy::StaticBaseline,
    };
    sim::run(&cfg.system, &policy, net, &cfg.link.models, &cfg.link.carrier, reqs.iter().copied())
        .map_err(|e| match e {
            sim::SimError::Config(_) => config_err(e),
            sim::SimError::Link(ref l) if l.is_infeasible() => Failure::Infeasible(anyhow!("link infeasible: {e}")),
            _ => runtime_err(e),
        })
}

pub fn simulate(
    ctx: &Ctx,
    cfg: &RunConfig,
    kind: PolicyKind,
    design_path: Option<&Path>,
    rules_dir: Option<&Path>,
    dir: &Path,
) -> CmdResult {
    let net = network(cfg)?;
    let rules = match kind {
        PolicyKind::Proteus => Some(proteus_rules(cfg, &net, design_path, rules_dir)?),
        _ => None,
    };
    let reqs = requests(cfg)?;
    ctx.progress(format!("simulating {} requests under {}", reqs.len(), kind.name()));
    let report = run_policy(cfg, kind, rules.as_ref(), &net, &reqs)?;
    let audit = sim::budget_audit(&report.records, &cfg.link.models, &cfg.link.carrier.with_n_lambda(cfg.system.n_lambda));

    write_json(&dir.join("report.json"), &report).map_err(runtime_err)?;
    let audit_json = json!({
        "checked": audit.checked,
        "violation_count": audit.violations.len(),
        "max_p_laser_dbm": (audit.checked > 0).then_some(audit.max_p_laser_dbm),
        "min_margin_db": (audit.checked > 0).then_some(audit.min_margin_db),
        "first_violations": audit.violations.iter().take(100).collect::<Vec<_>>(),
    });
    write_json(&dir.join("audit.json"), &audit_json).map_err(runtime_err)?;
    if cfg.output.records_csv {
        write_atomic(&dir.join("packets.csv"), report.records_csv().as_bytes()).map_err(runtime_err)?;
    }
    if cfg.output.power_csv {
        write_atomic(&dir.join("power.csv"), report.power_series_csv().as_bytes()).map_err(runtime_err)?;
    }
    let t = &report.totals;
    ctx.progress(format!(
        "delivered {} packets, mean latency {}, throughput {:.1} bit/ns, {} budget violations",
        t.delivered,
        t.avg_latency_ns.map_or("n/a".to_string(), |l| format!("{l:.3} ns")),
        t.throughput_bits_per_ns,
        audit.violations.len()
    ));
    Ok(())
}

pub fn compare(ctx: &Ctx, cfg: &RunConfig, design_path: Option<&Path>, rules_dir: Option<&Path>, dir: &Path) -> CmdResult {
    let net = network(cfg)?;
    let rules = proteus_rules(cfg, &net, design_path, rules_dir)?;
    let reqs = requests(cfg)?;
    ctx.progress(format!("comparing policies on {} requests", reqs.len()));
    let mut sim_cfg = cfg.clone();
    sim_cfg.system.keep_records = false;
    let reports = std::thread::scope(|s| {
        let handles: Vec<_> = PolicyKind::ALL
            .iter()
            .map(|&kind| {
                let (sim_cfg, rules, net, reqs) = (&sim_cfg, &rules, &net, &reqs);
                s.spawn(move || run_policy(sim_cfg, kind, Some(rules), net, reqs))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect::<Result<Vec<_>, _>>()
    })?;
    let table = metrics::compare(&reports, &cfg.metrics.laser, &cfg.metrics.overhead).map_err(runtime_err)?;
    write_atomic(&dir.join("comparison.csv"), table.to_csv().as_bytes()).map_err(runtime_err)?;
    write_json(&dir.join("comparison.json"), &table).map_err(runtime_err)?;
    if !ctx.quiet {
        eprint!("{}", table.to_csv());
    }
    Ok(())
}
