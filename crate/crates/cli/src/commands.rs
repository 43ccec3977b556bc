use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use fairalloc_core::alloc::allocate as run_rule;
use fairalloc_core::dataset::{
    build_auctions, gen_synthetic, ingest_csv, partition_horizons, planted_flip_rate, write_csv,
    Horizon, SyntheticConfig,
};
use fairalloc_core::payments::{ic_regret_report, payment_identity, QuadratureConfig};
use fairalloc_core::profiler::{
    build_profile, match_parameters, read_profile_csv, welfare_report, write_profile_csv,
    write_welfare_csv, ProfileConfig, StabilityProfile,
};
use fairalloc_core::stability::{
    alpha_ell, bound_report, f_ell, gap_bounds, near_optimal_params, stability_param,
    stability_violation_search, welfare_ratio,
};
use fairalloc_core::subset::{
    collection_widths, connected_parts, partition_subset_stability, partitioned_width,
    subset_stability_check, ClusterCappedIpa, ClusterPartition, PartitionHierarchical,
    SetCollection,
};
use fairalloc_core::{AllocRule, AllocationRule, ValueVector};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use crate::failure::Failure;
use crate::{
    AllocateArgs, BoundsArgs, ComposedKind, GenSynthArgs, InputArgs, MatchArgs, PaymentsArgs,
    ProfileArgs, RuleArgs, RuleKind, StabilityCheckArgs, SubsetCheckArgs, WelfareArgs,
};

type Outcome = Result<(), Failure>;

fn rules(r: &RuleArgs) -> Result<Vec<AllocRule>, Failure> {
    let need = |list: &[f64], flag: &str| {
        if list.is_empty() {
            Err(Failure::usage(format!(
                "--rule {} requires --{flag}",
                rule_flag(r.rule)
            )))
        } else {
            Ok(())
        }
    };
    let rules: Vec<AllocRule> = match r.rule {
        RuleKind::Ipa => {
            need(&r.ell, "ell")?;
            r.ell.iter().map(|&ell| AllocRule::Ipa { ell }).collect()
        }
        RuleKind::CappedIpa => {
            need(&r.ell, "ell")?;
            let beta = r
                .beta
                .ok_or_else(|| Failure::usage("--rule capped-ipa requires --beta"))?;
            r.ell
                .iter()
                .map(|&ell| AllocRule::CappedIpa { ell, beta })
                .collect()
        }
        RuleKind::Pa => {
            need(&r.exponent, "exponent")?;
            r.exponent
                .iter()
                .map(|&exponent| AllocRule::Proportional { exponent })
                .collect()
        }
        RuleKind::HighestBid => vec![AllocRule::HighestBid],
        RuleKind::Uniform => vec![AllocRule::Uniform],
    };
    for rule in &rules {
        rule.validate()?;
    }
    Ok(rules)
}

fn single_rule(r: &RuleArgs) -> Result<AllocRule, Failure> {
    match rules(r)?.as_slice() {
        [rule] => Ok(*rule),
        _ => Err(Failure::usage(
            "this command takes a single --ell / --exponent value",
        )),
    }
}

fn rule_flag(kind: RuleKind) -> &'static str {
    match kind {
        RuleKind::Ipa => "ipa",
        RuleKind::CappedIpa => "capped-ipa",
        RuleKind::Pa => "pa",
        RuleKind::HighestBid => "highest-bid",
        RuleKind::Uniform => "uniform",
    }
}

fn print_json<T: Serialize>(value: &T) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::io(e.to_string()))?;
    let mut out = io::stdout().lock();
    writeln!(out, "{text}")?;
    Ok(())
}

/// Writes `bytes` to `path`, or to standard output.
fn emit(path: Option<&Path>, bytes: &[u8]) -> Outcome {
    match path {
        Some(p) => {
            std::fs::write(p, bytes).map_err(|e| Failure::io(format!("{}: {e}", p.display())))
        }
        None => {
            io::stdout().lock().write_all(bytes)?;
            Ok(())
        }
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let file = File::open(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    serde_json::from_reader(io::BufReader::new(file))
        .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn advertiser_index(one_based: usize, k: usize) -> Result<usize, Failure> {
    if one_based == 0 || one_based > k {
        return Err(Failure::usage(format!("--advertiser must lie in 1..={k}")));
    }
    Ok(one_based - 1)
}

/// The selected month, or every auction when the log spans one month or
/// `pool` is set.
fn load_horizon(io: &InputArgs, pool: bool) -> Result<Horizon, Failure> {
    let auctions = build_auctions(&ingest_csv(&io.input)?);
    if auctions.is_empty() {
        return Err(Failure::empty(
            "the bid log holds no auction with two or more bidders",
        ));
    }
    let mut horizons = partition_horizons(auctions);
    let labels = || {
        horizons
            .iter()
            .map(|h| h.label.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    };
    match &io.horizon {
        Some(label) => match horizons.iter().position(|h| &h.label == label) {
            Some(i) => Ok(horizons.swap_remove(i)),
            None => Err(Failure::empty(format!(
                "no auctions in horizon {label}; available: {}",
                labels()
            ))),
        },
        None if horizons.len() == 1 => Ok(horizons.remove(0)),
        None if pool => Ok(Horizon {
            label: "all".into(),
            auctions: horizons.into_iter().flat_map(|h| h.auctions).collect(),
        }),
        None => Err(Failure::usage(format!(
            "the log spans several months; pick one with --horizon ({})",
            labels()
        ))),
    }
}

pub fn allocate(a: AllocateArgs) -> Outcome {
    let rule = single_rule(&a.rule)?;
    let values = ValueVector::new(a.values)?;
    let x = run_rule(&rule, &values)?;
    print_json(&json!({ "rule": rule, "allocation": x.probs() }))
}

pub fn payments(a: PaymentsArgs) -> Outcome {
    let rule = single_rule(&a.rule)?;
    let values = ValueVector::new(a.values)?;
    let quad = QuadratureConfig {
        tol: a.tol,
        ..QuadratureConfig::default()
    };
    let indices: Vec<usize> = match a.advertiser {
        Some(i) => vec![advertiser_index(i, values.len())?],
        None => (0..values.len()).collect(),
    };
    let mut rows = Vec::with_capacity(indices.len());
    for i in indices {
        let p = payment_identity(&rule, &values, i, &quad)?;
        let mut row = json!({
            "advertiser": i + 1,
            "value": values.as_slice()[i],
            "allocation": p.allocation_at_truth,
            "payment": p.payment,
            "quadrature_error_estimate": p.quadrature_error_estimate,
        });
        if let Some(d) = a.deviations {
            let report = ic_regret_report(&rule, &values, i, d, &quad)?;
            row["ic_regret"] = json!(report.regret);
        }
        rows.push(row);
    }
    print_json(&json!({ "rule": rule, "payments": rows }))
}

pub fn bounds(a: BoundsArgs) -> Outcome {
    if a.ell.is_empty() && a.near_optimal_alpha.is_none() {
        return Err(Failure::usage("give --ell and/or --near-optimal-alpha"));
    }
    let mut reports = Vec::new();
    let mut curves = Vec::new();
    for &ell in &a.ell {
        let report = bound_report(ell, a.k)?;
        let (stability_upper, ratio_lower) = gap_bounds(ell)?;
        let mut table = Vec::new();
        for &lambda in &a.lambda {
            let f = f_ell(lambda, ell)?;
            table.push(json!({ "lambda": lambda, "f": f }));
            curves.push((ell, lambda, f, report.alpha_ell));
        }
        reports.push(json!({
            "ell": ell,
            "alpha_ell": report.alpha_ell,
            "upper_bound": report.upper_bound,
            "upper_bound_lambda": report.params.get("lambda"),
            "gap_bounds": { "stability_upper": stability_upper, "ratio_lower": ratio_lower },
            "f_ell": table,
        }));
    }
    let mut out = json!({ "k": a.k, "bounds": reports });
    if let Some(alpha) = a.near_optimal_alpha {
        out["near_optimal"] = serde_json::to_value(near_optimal_params(alpha)?)
            .map_err(|e| Failure::io(e.to_string()))?;
    }
    if let Some(path) = &a.curves_csv {
        let mut text = String::from("ell,lambda,f_ell,alpha_ell\n");
        for (ell, lambda, f, alpha) in curves {
            text.push_str(&format!("{ell},{lambda},{f},{alpha}\n"));
        }
        emit(Some(path), text.as_bytes())?;
    }
    print_json(&out)
}

/// The guarantee a built-in rule carries at similarity `lambda`. The
/// proportional bound is the one it shares with IPA(exponent / 2).
fn stability_bound(rule: &AllocRule, lambda: f64) -> Result<Option<f64>, Failure> {
    Ok(match *rule {
        AllocRule::Ipa { ell } => Some(f_ell(lambda, ell)?),
        AllocRule::CappedIpa { ell, beta } => Some(beta * f_ell(lambda, ell)?),
        AllocRule::Proportional { exponent } => Some(f_ell(lambda, exponent / 2.0)?),
        AllocRule::Uniform => Some(0.0),
        AllocRule::HighestBid => None,
    })
}

pub fn stability_check(a: StabilityCheckArgs) -> Outcome {
    let rule = single_rule(&a.rule)?;
    let values = ValueVector::new(a.values)?;
    let worst = stability_violation_search(&rule, &values, a.lambda, a.samples, a.seed)?;
    let bound = stability_bound(&rule, a.lambda)?;
    print_json(&json!({
        "rule": rule,
        "lambda": a.lambda,
        "seed": a.seed,
        "worst_change": worst,
        "bound": bound,
        "within_bound": bound.map(|b| worst <= b + 1e-9),
    }))
}

pub fn subset_check(a: SubsetCheckArgs) -> Outcome {
    let collection: SetCollection = read_json(&a.collection)?;
    let v = ValueVector::new(a.values)?;
    let w = ValueVector::new(a.other_values)?;
    if v.len() != collection.k() || w.len() != collection.k() {
        return Err(Failure::usage(format!(
            "the collection has k = {} but the value vectors have lengths {} and {}",
            collection.k(),
            v.len(),
            w.len()
        )));
    }
    let lambda = stability_param(&v, &w)?;
    let f = f_ell(lambda, a.ell)?;
    let alpha = alpha_ell(a.ell)?;
    let (width, cluster_width) = collection_widths(&collection);

    let out = match a.algorithm {
        ComposedKind::ClusterCapped => {
            if a.parts.is_some() {
                return Err(Failure::usage(
                    "--parts only applies to partition-hierarchical",
                ));
            }
            let n = a.n.unwrap_or(cluster_width.max(1));
            let rule = ClusterCappedIpa::new(a.ell, n, &collection)?;
            let x = rule.allocate(&v)?;
            json!({
                "algorithm": "cluster-capped",
                "width": width,
                "cluster_width": cluster_width,
                "n": n,
                "lambda": lambda,
                "subset_change": subset_stability_check(&rule, &collection, &v, &w)?,
                "subset_bound": f,
                "per_advertiser_change": x.max_abs_diff(&rule.allocate(&w)?),
                "per_advertiser_bound": 2.0 * f,
                "welfare_ratio": welfare_ratio(&x, &v)?,
                "welfare_floor": alpha * alpha / n as f64,
            })
        }
        ComposedKind::PartitionHierarchical => {
            if a.n.is_some() {
                return Err(Failure::usage("--n only applies to cluster-capped"));
            }
            let parts: ClusterPartition = match &a.parts {
                Some(p) => read_json(p)?,
                None => connected_parts(&collection),
            };
            let n = partitioned_width(&collection, &parts)?;
            let rule = PartitionHierarchical::new(a.ell, parts.clone())?;
            let x = rule.allocate(&v)?;
            json!({
                "algorithm": "partition-hierarchical",
                "width": width,
                "partitioned_width": n,
                "parts": parts,
                "lambda": lambda,
                "subset_change": subset_stability_check(&rule, &collection, &v, &w)?,
                "part_subset_change": partition_subset_stability(&rule, &parts, &v, &w)?,
                "subset_bound": 2.0 * f,
                "welfare_ratio": welfare_ratio(&x, &v)?,
                "welfare_floor": (n as f64).powf(-2.0 / a.ell) * alpha,
            })
        }
    };
    print_json(&out)
}

pub fn profile(a: ProfileArgs) -> Outcome {
    let rules = rules(&a.rule)?;
    let cfg = ProfileConfig {
        jaccard_min: a.jaccard_min,
        bucket_width: a.bucket_width,
        percentile: a.percentile,
        max_samples_per_bucket: a.max_samples,
        seed: a.seed,
        ..ProfileConfig::default()
    };
    cfg.validate()?;
    let horizon = load_horizon(&a.io, false)?;
    let profiles: Vec<StabilityProfile> = rules
        .iter()
        .map(|rule| build_profile(&horizon, rule, &cfg))
        .collect::<Result<_, _>>()?;
    let mut bytes = Vec::new();
    write_profile_csv(&profiles, &mut bytes)?;
    emit(a.io.output.as_deref(), &bytes)
}

pub fn welfare(a: WelfareArgs) -> Outcome {
    let rules = rules(&a.rule)?;
    let horizon = load_horizon(&a.io, true)?;
    let report = welfare_report(&horizon, &rules)?;
    let mut bytes = Vec::new();
    write_welfare_csv(&report, &mut bytes)?;
    emit(a.io.output.as_deref(), &bytes)
}

pub fn match_profiles(a: MatchArgs) -> Outcome {
    let file = File::open(&a.profiles)
        .map_err(|e| Failure::io(format!("{}: {e}", a.profiles.display())))?;
    let profiles = read_profile_csv(io::BufReader::new(file))?;
    let family = |name: &str| -> Result<Vec<(f64, StabilityProfile)>, Failure> {
        let chosen: Vec<(f64, StabilityProfile)> = profiles
            .iter()
            .filter(|p| p.algorithm == name)
            .filter_map(|p| p.ell.map(|ell| (ell, p.clone())))
            .collect();
        if chosen.is_empty() {
            return Err(Failure::empty(format!(
                "no `{name}` profiles with a parameter in the input"
            )));
        }
        Ok(chosen)
    };
    let matches = match_parameters(&family(&a.from)?, &family(&a.to)?)?;
    print_json(&matches)
}

pub fn gen_synth(a: GenSynthArgs) -> Outcome {
    let mut config: SyntheticConfig = match &a.synth_config {
        Some(p) => read_json(p)?,
        None => SyntheticConfig::default(),
    };
    if let Some(n) = a.keywords {
        config.keywords = n;
    }
    if let Some(n) = a.advertisers {
        config.advertisers = n;
    }
    if let Some(n) = a.months {
        config.months = n;
    }
    if let Some(s) = a.bid_sigma {
        config.bid_sigma = s;
    }
    if let Some(f) = a.near_tie_fraction {
        config.near_tie_fraction = f;
    }
    let records = gen_synthetic(a.seed, &config)?;
    let file =
        File::create(&a.output).map_err(|e| Failure::io(format!("{}: {e}", a.output.display())))?;
    write_csv(&records, io::BufWriter::new(file))?;
    print_json(&json!({
        "records": records.len(),
        "planted_flip_rate": planted_flip_rate(&config)?,
        "config": config,
    }))
}
