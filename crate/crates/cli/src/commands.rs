use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};

use crm_lab::bounds::{
    c_term, crm_bound_all_tau, crm_bound_fixed_tau, data_dep_c_term, data_dep_risk_bound,
    gaussian_kl_bound, gaussian_kl_exact, mixed_logit_risk_bound, nll_lipschitz, BoundInputs,
    StabilityParams,
};
use crm_lab::data::{load_labeled, load_logged, save_labeled, save_logged};
use crm_lab::estimators::{argmax_accuracy, expected_reward_stochastic, ips_risk, mean_param_risk};
use crm_lab::learning::{
    cross_validate, fit_supervised, learn_logging_policy, logging_nll_value, CvConfig, SigmaMode,
    TuneTarget, SHORT_EPOCHS,
};
use crm_lab::model_io::{load_model, save_model, save_report, save_trace, ModelFile};
use crm_lab::policy::{param_distance_sq, MixedLogitSpec};
use crm_lab::seed::derive;
use crm_lab::simulate::{conversion_split, simulate_logs, temper, SplitMode};
use crm_lab::synthetic::ClusterTask;
use crm_lab::{LoggedDataset, Objective, SoftmaxPolicy, TrainConfig};

use crate::{
    BoundArgs, EvaluateArgs, GenerateArgs, LearnLoggingArgs, OptimArgs, SimulateArgs, TrainArgs,
    TuneArgs,
};

const LPR_GRID: [f64; 6] = [1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3];
const VARIANCE_GRID: [f64; 6] = [1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0];

fn config(optim: &OptimArgs, default_epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs: optim.epochs.unwrap_or(default_epochs),
        batch_size: optim.batch_size,
        learning_rate: optim.lr,
        adagrad_smoothing: optim.adagrad_smoothing,
        seed: optim.seed,
        ..TrainConfig::default()
    }
}

fn load_policy(path: &Path) -> Result<(ModelFile, SoftmaxPolicy)> {
    let model = load_model(path)?;
    let policy = model.policy()?;
    Ok((model, policy))
}

fn actions(k: Option<usize>, model: Option<&ModelFile>) -> Result<usize> {
    match (k, model) {
        (Some(k), Some(m)) if k != m.k => {
            bail!("--k {k} disagrees with the model's {} actions", m.k)
        }
        (Some(k), _) => Ok(k),
        (None, Some(m)) => Ok(m.k),
        (None, None) => bail!("pass --k with the number of actions"),
    }
}

fn parse_sigma_mode(s: &str) -> Result<SigmaMode> {
    Ok(match s {
        "inverse-n" | "inverse_n" => SigmaMode::InverseN,
        "closed-form" | "closed_form" => SigmaMode::ClosedForm,
        other => SigmaMode::Fixed(other.parse().with_context(|| {
            format!("--sigma-mode {other:?} is not inverse-n, closed-form or a number")
        })?),
    })
}

/// Writes CSV rows to `out` when given, otherwise to stdout.
fn emit(out: Option<&Path>, header: &str, rows: &[String]) -> Result<()> {
    let mut w: Box<dyn Write> = match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    };
    writeln!(w, "{header}")?;
    for r in rows {
        writeln!(w, "{r}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    let task = ClusterTask::new(a.d, a.k, a.separation, a.noise, a.task_seed)?;
    let data = task.sample(a.n, a.seed)?;
    save_labeled(&data, &a.out)?;
    println!("n,d,k");
    println!("{},{},{}", data.len(), data.d(), data.k());
    Ok(())
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let (logging, source) = match (&a.logging_model, a.fit_logging) {
        (Some(path), _) => {
            let (model, policy) = load_policy(path)?;
            let k = actions(a.k, Some(&model))?;
            (policy, load_labeled(&a.labeled, k)?)
        }
        (None, Some(n_fit)) => {
            let all = load_labeled(&a.labeled, actions(a.k, None)?)?;
            let split =
                conversion_split(all.len(), n_fit, a.trial, SplitMode::Independent, a.seed)?;
            let base = TrainConfig {
                epochs: a.fit_epochs,
                seed: derive(a.seed, "fit-logging"),
                ..TrainConfig::logging_default()
            };
            let policy = fit_supervised(&all.subset(&split.logging)?, a.fit_lambda, &base)?;
            if let Some(out) = &a.logging_model_out {
                save_model(&ModelFile::from_policy(&policy), out)?;
            }
            (policy, all.subset(&split.logged)?)
        }
        (None, None) => bail!("pass --logging-model or --fit-logging"),
    };
    if !(a.kappa >= 0.0 && a.kappa.is_finite()) {
        bail!("--kappa must be finite and nonnegative, got {}", a.kappa);
    }
    let logging = temper(&logging, a.kappa);
    let logs = simulate_logs(&logging, &source, a.seed)?;
    save_logged(&logs, &a.out)?;
    let reward = 1.0 - ips_risk(&logging, &logs)?;
    emit(
        None,
        "n,k,d,B,logging_ips_reward",
        &[format!(
            "{},{},{},{},{reward}",
            logs.len(),
            logs.k(),
            logs.d(),
            logs.feature_norm_bound()
        )],
    )
}

pub fn learn_logging(a: &LearnLoggingArgs) -> Result<()> {
    let logs = load_logged(&a.logged, a.k)?;
    let base = config(&a.optim, SHORT_EPOCHS);
    let policy = learn_logging_policy(&logs, a.lambda, &base)?;
    let mut model = ModelFile::from_policy(&policy);
    model.feature_norm_bound = Some(logs.feature_norm_bound());
    save_model(&model, &a.out)?;
    let nll = logging_nll_value(&policy, &logs, 0.0)?;
    emit(
        None,
        "n,lambda,nll",
        &[format!("{},{},{nll}", logs.len(), a.lambda)],
    )
}

fn load_prior(path: Option<&Path>) -> Result<Option<(ModelFile, SoftmaxPolicy)>> {
    path.map(load_policy).transpose()
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let objective: Objective = a.objective.parse()?;
    let prior = load_prior(a.prior_model.as_deref())?;
    if objective.needs_prior() != prior.is_some() {
        if prior.is_some() {
            bail!("{objective} takes no --prior-model");
        }
        bail!("{objective} needs --prior-model");
    }
    let logs = load_logged(&a.logged, actions(a.k, prior.as_ref().map(|p| &p.0))?)?;
    let cfg = TrainConfig {
        objective,
        lambda: a.lambda,
        lambda_l2: a.lambda_l2,
        tau: a.tau,
        sigma0: a.sigma0,
        sigma_mode: parse_sigma_mode(&a.sigma_mode)?,
        ..config(&a.optim, 500)
    };
    let prior_policy = prior.as_ref().map(|p| &p.1);
    let report = crm_lab::learning::train(&cfg, &logs, prior_policy)?;

    let mut model = ModelFile::from_policy(&report.final_policy);
    model.sigma = report.sigma_star;
    model.sigma0 = Some(cfg.sigma0);
    model.feature_norm_bound = Some(logs.feature_norm_bound());
    if let Some(p) = prior_policy {
        model = model.with_prior(p);
    }
    save_model(&model, &a.out)?;
    if let Some(path) = &a.report {
        save_report(&report, path)?;
    }
    if let Some(path) = &a.trace {
        save_trace(&report.objective_trace, path)?;
    }
    let final_objective = report
        .objective_trace
        .last()
        .map_or(String::new(), |s| s.objective.to_string());
    let distance = match prior_policy {
        Some(p) => param_distance_sq(&report.final_policy, p)?
            .sqrt()
            .to_string(),
        None => String::new(),
    };
    let sigma = report.sigma_star.map_or(String::new(), |s| s.to_string());
    emit(
        None,
        "objective,lambda,epochs,final_objective,sigma,prior_distance",
        &[format!(
            "{objective},{},{},{final_objective},{sigma},{distance}",
            cfg.lambda, cfg.epochs
        )],
    )
}

pub fn tune(a: &TuneArgs) -> Result<()> {
    let objective: Objective = a.objective.parse()?;
    let prior = load_prior(a.prior_model.as_deref())?;
    if objective.needs_prior() && prior.is_none() {
        bail!("{objective} needs --prior-model");
    }
    let logs = load_logged(&a.logged, actions(a.k, prior.as_ref().map(|p| &p.0))?)?;
    let grid = match &a.grid {
        Some(g) => g.clone(),
        None if objective.is_poem() && !a.tune_l2 => VARIANCE_GRID.to_vec(),
        None => LPR_GRID.to_vec(),
    };
    let (target, lambda, lambda_l2) = if a.tune_l2 {
        (TuneTarget::LambdaL2, a.other_lambda, 0.0)
    } else {
        (TuneTarget::Lambda, 0.0, a.other_lambda)
    };
    let base = TrainConfig {
        objective,
        lambda,
        lambda_l2,
        tau: a.tau,
        ..config(&a.optim, SHORT_EPOCHS)
    };
    let cv = CvConfig {
        num_folds: a.folds,
        seed: a.optim.seed,
        epochs: base.epochs,
        threads: a.threads,
        target,
    };
    let result = cross_validate(&logs, &base, prior.as_ref().map(|p| &p.1), &grid, &cv)?;
    let folds: Vec<String> = (1..=a.folds).map(|f| format!("fold_{f}")).collect();
    let header = format!("lambda,{},mean_score,selected", folds.join(","));
    let rows: Vec<String> = result
        .rows
        .iter()
        .map(|r| {
            let scores: Vec<String> = r.fold_scores.iter().map(f64::to_string).collect();
            format!(
                "{},{},{},{}",
                r.lambda,
                scores.join(","),
                r.mean_score,
                u8::from(r.lambda == result.best_lambda)
            )
        })
        .collect();
    emit(a.out.as_deref(), &header, &rows)?;
    if a.out.is_some() {
        println!("best_lambda");
        println!("{}", result.best_lambda);
    }
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let (model, policy) = load_policy(&a.model)?;
    let test = load_labeled(&a.test, model.k)?;
    let reward = expected_reward_stochastic(&policy, &test)?;
    let accuracy = argmax_accuracy(&policy, &test)?;
    let row = format!("{},{reward},{accuracy}", test.len());
    emit(
        None,
        "n,stochastic_reward,argmax_accuracy",
        std::slice::from_ref(&row),
    )?;
    if let Some(out) = &a.out {
        emit(Some(out), "n,stochastic_reward,argmax_accuracy", &[row])?;
    }
    Ok(())
}

struct BoundRow {
    name: &'static str,
    kl_exact: f64,
    kl_bound: f64,
    complexity: f64,
    value: f64,
}

pub fn bound(a: &BoundArgs) -> Result<()> {
    let (model, theta) = load_policy(&a.model)?;
    let (_, prior) = load_policy(&a.prior_model)?;
    let logs: LoggedDataset = load_logged(&a.logged, model.k)?;
    let sigma0 = a.sigma0.or(model.sigma0).unwrap_or(1.0);
    let sigma = match a.sigma.or(model.sigma) {
        Some(s) => s,
        None => bail!("the model stores no sigma; pass --sigma"),
    };
    if !(sigma > 0.0 && sigma <= sigma0) {
        bail!(
            "sigma = {sigma} must lie in (0, sigma0 = {sigma0}]: the Gaussian KL bound assumes the posterior is no wider than the prior"
        );
    }
    let (n, d_eff) = (logs.len(), theta.weight_count());
    let b = logs.feature_norm_bound();
    let rho = mean_param_risk(&theta, sigma, b, &logs, a.tau)?;
    let kl_exact = gaussian_kl_exact(&theta, sigma, &prior, sigma0, d_eff)?;
    let kl_bound = gaussian_kl_bound(&theta, sigma, &prior, sigma0, d_eff)?;
    let c = c_term(&theta, sigma, &prior, sigma0, d_eff)?;
    let spec = MixedLogitSpec::new(theta.clone(), sigma, prior.clone(), sigma0)?;

    let mut rows = Vec::new();
    let inputs = BoundInputs {
        n,
        delta: a.delta,
        tau: a.tau,
        kl_term: kl_exact,
        emp_risk: rho,
    };
    if a.fixed_tau {
        rows.push(BoundRow {
            name: "fixed_tau",
            kl_exact,
            kl_bound,
            complexity: c,
            value: crm_bound_fixed_tau(&inputs)?,
        });
    }
    if a.all_tau {
        rows.push(BoundRow {
            name: "all_tau",
            kl_exact,
            kl_bound,
            complexity: c,
            value: crm_bound_all_tau(&inputs)?,
        });
    }
    rows.push(BoundRow {
        name: "mixed_logit",
        kl_exact,
        kl_bound,
        complexity: c,
        value: mixed_logit_risk_bound(&spec, &logs, a.tau, a.delta)?,
    });
    if a.learned_prior {
        let stability = StabilityParams {
            lipschitz: nll_lipschitz(b),
            lambda: a.rerm_lambda,
            n,
            delta: a.delta,
        };
        rows.push(BoundRow {
            name: "learned_prior",
            kl_exact,
            kl_bound,
            complexity: data_dep_c_term(&theta, sigma, &prior, sigma0, &stability, d_eff)?,
            value: data_dep_risk_bound(&spec, &logs, a.tau, a.delta, &stability)?,
        });
    }
    let lines: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{n},{},{},{sigma},{sigma0},{rho},{},{},{},{}",
                r.name, a.tau, a.delta, r.kl_exact, r.kl_bound, r.complexity, r.value
            )
        })
        .collect();
    emit(
        a.out.as_deref(),
        "bound,n,tau,delta,sigma,sigma0,rho_hat,kl_exact,kl_bound,complexity,value",
        &lines,
    )
}
