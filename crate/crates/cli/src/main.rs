use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use projdist::fixtures::{
    generate_grid_map, pack_crack_north, sample_plans, GridSpec, PartisanModel, PopulationModel, DRAWS_PER_PLAN,
};
use projdist::inference::{fwer_validation, lineup, ProjectiveDistribution, Sidedness, StAnalysis};
use projdist::io::{
    join_geojson, load_ensemble, load_map, read_field, read_json, read_selection, write_ensemble, write_field,
    write_json, write_map, write_text, LoadedPlans,
};
use projdist::model::{Plan, PrecinctField, PrecinctMap};
use projdist::projection::{aggregate_field, normalize, project, projective_average_of};
use projdist::render::{render_svg, Geometry, Palette};
use projdist::stats::{order_statistic_quantiles, order_statistics, DistrictValues, Statistic, StatisticSpec, BOXPLOT_PROBS};
use projdist::Error;
use serde_json::json;

#[derive(Parser)]
#[command(name = "projdist", version, about = "Projective contrasts and pFDR precinct selection for redistricting ensembles")]
struct Cli {
    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct MapArgs {
    /// Precinct attributes CSV.
    #[arg(long)]
    map: PathBuf,
    /// Adjacency CSV.
    #[arg(long)]
    edges: PathBuf,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    map: MapArgs,
    /// Assignment matrix CSV.
    #[arg(long)]
    plans: PathBuf,
    /// Column of the assignment matrix holding the comparison plan.
    #[arg(long)]
    enacted: Option<String>,
    /// Statistic as kind:name:col1[:col2...]; repeatable. Defaults to Democratic share.
    #[arg(long = "stat")]
    stats: Vec<StatisticSpec>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Inference {
    #[arg(long, default_value = "upper")]
    side: Sidedness,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Per-plan district values and order-statistic quantiles.
    Stats(PlanArgs),
    /// Projective average, sd, contrast and normalized contrast of the comparison plan.
    Contrast {
        #[command(flatten)]
        plans: PlanArgs,
        /// GeoJSON feature collection to copy with the contrast joined in.
        #[arg(long)]
        geojson: Option<PathBuf>,
    },
    /// pFDR-controlled selection of precincts where the comparison plan is extreme.
    Fdr {
        #[command(flatten)]
        plans: PlanArgs,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value = "upper")]
        side: Sidedness,
        #[arg(long)]
        geojson: Option<PathBuf>,
    },
    /// Contrast panels with the comparison plan hidden among ensemble plans.
    Lineup {
        #[command(flatten)]
        plans: PlanArgs,
        #[arg(long, default_value_t = 7)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Divide panels by the projective sd.
        #[arg(long)]
        normalized: bool,
        /// Where to write the answer key; defaults to lineup_key.json in the output directory.
        #[arg(long)]
        key: Option<PathBuf>,
    },
    /// Leave-one-out family-wise error check under the global null.
    ValidateFwer {
        #[command(flatten)]
        plans: PlanArgs,
        /// Nominal levels; repeatable.
        #[arg(long = "alpha", default_values_t = [0.01, 0.05, 0.1, 0.2])]
        alphas: Vec<f64>,
        #[arg(long, default_value_t = 200)]
        holdouts: usize,
        #[command(flatten)]
        inference: Inference,
    },
    /// Synthetic grid map, sampled ensemble and optional planted comparison plan.
    Fixture(FixtureArgs),
    /// SVG choropleth of a field CSV.
    Render(RenderArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Partisan {
    Uniform,
    Gradient,
    Hotspot,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long, default_value_t = 10)]
    rows: usize,
    #[arg(long, default_value_t = 10)]
    cols: usize,
    #[arg(long, default_value_t = 4)]
    districts: usize,
    /// Ensemble size.
    #[arg(long = "n", default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0.05)]
    pop_tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-precinct population; with --pop-east, the west edge of a gradient.
    #[arg(long, default_value_t = 100)]
    population: u32,
    #[arg(long)]
    pop_east: Option<u32>,
    #[arg(long, value_enum, default_value_t = Partisan::Hotspot)]
    partisan: Partisan,
    /// Uniform share, gradient west share, or hotspot base share.
    #[arg(long, default_value_t = 0.35)]
    share: f64,
    /// Gradient east share or hotspot peak increment.
    #[arg(long, default_value_t = 0.45)]
    intensity: f64,
    #[arg(long, default_value_t = 0.0)]
    center_row: f64,
    /// Defaults to the middle column.
    #[arg(long)]
    center_col: Option<f64>,
    #[arg(long, default_value_t = 3.0)]
    radius: f64,
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    /// Add a pack-and-crack comparison plan of the northern half as column `enacted`.
    #[arg(long)]
    planted: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PaletteKind {
    Diverging,
    Sequential,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    map: MapArgs,
    /// Field CSV (id,value or id,pvalue).
    #[arg(long)]
    field: PathBuf,
    /// Selection CSV whose `selected` precincts are hatched.
    #[arg(long)]
    selection: Option<PathBuf>,
    /// Assignment matrix and column whose district borders are drawn.
    #[arg(long, requires = "borders_column")]
    borders: Option<PathBuf>,
    #[arg(long)]
    borders_column: Option<String>,
    /// Polygon geometry; grid maps need none.
    #[arg(long)]
    geojson: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PaletteKind::Diverging)]
    palette: PaletteKind,
    /// Diverging half-range; defaults to the largest magnitude.
    #[arg(long)]
    limit: Option<f64>,
    #[arg(long)]
    min: Option<f64>,
    #[arg(long)]
    max: Option<f64>,
    /// Output SVG file.
    #[arg(long)]
    out: PathBuf,
}

fn error_code(e: &Error) -> &'static str {
    match e {
        Error::Io { .. } => "io",
        Error::Parse { .. } => "parse",
        _ => "validation",
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("ERROR[usage]: {first}");
            return ExitCode::from(1);
        }
    };
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("ERROR[usage]: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ERROR[{}]: {e}", error_code(&e));
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> projdist::Result<()> {
    match command {
        Command::Stats(args) => cmd_stats(&args),
        Command::Contrast { plans, geojson } => cmd_contrast(&plans, geojson.as_deref()),
        Command::Fdr { plans, alpha, side, geojson } => cmd_fdr(&plans, alpha, side, geojson.as_deref()),
        Command::Lineup { plans, k, seed, normalized, key } => cmd_lineup(&plans, k, seed, normalized, key.as_deref()),
        Command::ValidateFwer { plans, alphas, holdouts, inference } => {
            cmd_validate(&plans, &alphas, holdouts, inference.side, inference.seed)
        }
        Command::Fixture(args) => cmd_fixture(&args),
        Command::Render(args) => cmd_render(&args),
    }
}

struct Loaded {
    map: Arc<PrecinctMap>,
    plans: LoadedPlans,
    stats: Vec<Statistic>,
}

fn out_dir(path: &Path) -> projdist::Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn load(args: &PlanArgs) -> projdist::Result<Loaded> {
    let map = Arc::new(load_map(&args.map.map, &args.map.edges)?);
    let plans = load_ensemble(map.clone(), &args.plans, args.enacted.as_deref())?;
    let specs = if args.stats.is_empty() { vec![StatisticSpec::dem_share()] } else { args.stats.clone() };
    let stats = specs.iter().map(|s| Statistic::compile(&map, s)).collect::<projdist::Result<_>>()?;
    out_dir(&args.out)?;
    Ok(Loaded { map, plans, stats })
}

fn comparison(loaded: &Loaded) -> projdist::Result<&Plan> {
    loaded
        .plans
        .enacted
        .as_ref()
        .ok_or_else(|| Error::invalid("no comparison plan: add an `enacted` column or pass --enacted <column>"))
}

fn csv_row(label: &str, values: &[f64]) -> String {
    let mut line = label.to_string();
    for x in values {
        line.push(',');
        line.push_str(&x.to_string());
    }
    line.push('\n');
    line
}

fn header(first: &str, prefix: &str, d: usize) -> String {
    let mut h = first.to_string();
    for j in 1..=d {
        h.push_str(&format!(",{prefix}{j}"));
    }
    h.push('\n');
    h
}

fn cmd_stats(args: &PlanArgs) -> projdist::Result<()> {
    let loaded = load(args)?;
    let ensemble = &loaded.plans.ensemble;
    let d = ensemble.districts();
    for stat in &loaded.stats {
        let values = DistrictValues::evaluate(ensemble, stat)?;
        let enacted = loaded
            .plans
            .enacted
            .as_ref()
            .map(|p| stat.evaluate(&loaded.map, p.view()))
            .transpose()?;

        let mut body = header("plan", "district_", d);
        for (name, row) in loaded.plans.plan_names.iter().zip(values.rows()) {
            body.push_str(&csv_row(name, row));
        }
        if let Some(e) = &enacted {
            body.push_str(&csv_row("enacted", e));
        }
        write_text(&args.out.join(format!("{}_districts.csv", stat.name())), &body)?;

        let mut body = header("quantile", "rank_", d);
        for (p, row) in BOXPLOT_PROBS.iter().zip(order_statistic_quantiles(&values, &BOXPLOT_PROBS)) {
            body.push_str(&csv_row(&p.to_string(), &row));
        }
        if let Some(e) = &enacted {
            body.push_str(&csv_row("enacted", &order_statistics(e)));
        }
        write_text(&args.out.join(format!("{}_order_quantiles.csv", stat.name())), &body)?;
    }
    Ok(())
}

fn svg_if_grid(
    map: &PrecinctMap,
    field: &PrecinctField,
    selection: Option<&[bool]>,
    borders: Option<&Plan>,
    palette: Palette,
    path: &Path,
) -> projdist::Result<()> {
    match Geometry::from_grid_columns(map) {
        Some(g) => write_text(path, &render_svg(map, &g, field, selection, borders.map(|p| p.labels()), palette)),
        None => {
            eprintln!("note: no grid geometry in map; skipping {}", path.display());
            Ok(())
        }
    }
}

fn cmd_contrast(args: &PlanArgs, geojson: Option<&Path>) -> projdist::Result<()> {
    let loaded = load(args)?;
    let plan0 = comparison(&loaded)?;
    let map = &loaded.map;
    let ensemble = &loaded.plans.ensemble;
    let collection = geojson.map(read_json).transpose()?;
    let mut report = serde_json::Map::new();
    for stat in &loaded.stats {
        let name = stat.name();
        let values = DistrictValues::evaluate(ensemble, stat)?;
        let summary = projective_average_of(ensemble, &values);
        let own = project(plan0.view(), &stat.evaluate(map, plan0.view())?);
        let contrast = own.minus(&summary.mean);
        let z = normalize(&contrast, &summary.sd);
        write_field(map, &summary.mean, &args.out.join(format!("{name}_average.csv")))?;
        write_field(map, &summary.sd, &args.out.join(format!("{name}_sd.csv")))?;
        write_field(map, &contrast, &args.out.join(format!("{name}_contrast.csv")))?;
        write_field(map, &z.field, &args.out.join(format!("{name}_normalized.csv")))?;
        let mut entry = json!({ "plans": summary.n, "undefined_normalized": z.undefined });
        if map.regions().is_some() {
            let by_region = aggregate_field(map, &contrast, projdist::model::POPULATION)?;
            let mut body = String::from("region,value\n");
            for (q, x) in &by_region {
                body.push_str(&format!("{q},{x}\n"));
            }
            write_text(&args.out.join(format!("{name}_contrast_by_region.csv")), &body)?;
        }
        let by_district = projdist::projection::aggregate_by(
            &plan0.labels().iter().map(|&l| l as i64).collect::<Vec<_>>(),
            &contrast,
            map.population(),
        )?;
        entry["contrast_by_district"] = json!(by_district.iter().map(|(q, x)| json!([q, x])).collect::<Vec<_>>());
        if let Some(c) = &collection {
            write_json(&args.out.join(format!("{name}_contrast.geojson")), &join_geojson(map, &contrast, c, name)?)?;
        }
        let div = Palette::Diverging { limit: None };
        svg_if_grid(map, &contrast, None, Some(plan0), div, &args.out.join(format!("{name}_contrast.svg")))?;
        svg_if_grid(map, &z.field, None, Some(plan0), div, &args.out.join(format!("{name}_normalized.svg")))?;
        svg_if_grid(
            map,
            &summary.mean,
            None,
            None,
            Palette::Sequential { min: None, max: None },
            &args.out.join(format!("{name}_average.svg")),
        )?;
        if z.undefined > 0 {
            eprintln!("note: {name}: {} precincts have zero sd and nonzero contrast; left missing", z.undefined);
        }
        report.insert(name.to_string(), entry);
    }
    write_json(&args.out.join("contrast_report.json"), &serde_json::Value::Object(report))
}

fn cmd_fdr(args: &PlanArgs, alpha: f64, side: Sidedness, geojson: Option<&Path>) -> projdist::Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    let loaded = load(args)?;
    let plan0 = comparison(&loaded)?;
    let map = &loaded.map;
    let ensemble = &loaded.plans.ensemble;
    if ensemble.len() < 2 {
        eprintln!("warning: ensemble has {} plan; p-values are degenerate", ensemble.len());
    }
    let collection = geojson.map(read_json).transpose()?;
    for stat in &loaded.stats {
        let name = stat.name();
        let values = DistrictValues::evaluate(ensemble, stat)?;
        let dist = ProjectiveDistribution::from_ensemble(ensemble, &values);
        let own = project(plan0.view(), &stat.evaluate(map, plan0.view())?);
        let analysis = StAnalysis::compute(&own.to_dense(), &dist, side, None)?;
        let result = analysis.select(alpha);
        let mask = result.selected_mask();
        let mut body = String::from("id,pvalue,selected\n");
        for (v, id) in map.ids().iter().enumerate() {
            body.push_str(&format!("{id},{},{}\n", result.pvalues.get(v), mask[v]));
        }
        write_text(&args.out.join(format!("{name}_selection.csv")), &body)?;
        let mut sidecar = result.sidecar();
        sidecar["sidedness"] = json!(side);
        sidecar["discoveries"] = json!(result.discoveries);
        write_json(&args.out.join(format!("{name}_selection.json")), &sidecar)?;
        let contrast = own.minus(&projective_average_of(ensemble, &values).mean);
        if let Some(c) = &collection {
            let with_p = join_geojson(map, &result.pvalues.values, c, &format!("{name}_pvalue"))?;
            let flags = PrecinctField::from_values(mask.iter().map(|&s| s as u8 as f64).collect());
            write_json(
                &args.out.join(format!("{name}_selection.geojson")),
                &join_geojson(map, &flags, &with_p, &format!("{name}_selected"))?,
            )?;
        }
        svg_if_grid(
            map,
            &contrast,
            Some(&mask),
            Some(plan0),
            Palette::Diverging { limit: None },
            &args.out.join(format!("{name}_selection.svg")),
        )?;
        eprintln!(
            "{name}: pi0_hat {:.4}, gamma_hat {}, {} precincts selected",
            result.pi0_hat,
            result.gamma_hat.map_or("none".to_string(), |g| format!("{g:.6}")),
            result.discoveries
        );
    }
    Ok(())
}

fn cmd_lineup(args: &PlanArgs, k: usize, seed: u64, normalized: bool, key: Option<&Path>) -> projdist::Result<()> {
    let loaded = load(args)?;
    let plan0 = comparison(&loaded)?;
    let map = &loaded.map;
    let ensemble = &loaded.plans.ensemble;
    let mut keys = serde_json::Map::new();
    for stat in &loaded.stats {
        let name = stat.name();
        let values = DistrictValues::evaluate(ensemble, stat)?;
        let own = project(plan0.view(), &stat.evaluate(map, plan0.view())?);
        let panels = lineup(ensemble, &values, &own, k, seed, normalized)?;
        let limit = panels.panels.iter().map(PrecinctField::max_abs).fold(0.0, f64::max);
        for (i, panel) in panels.panels.iter().enumerate() {
            write_field(map, panel, &args.out.join(format!("{name}_lineup_{}.csv", i + 1)))?;
            svg_if_grid(
                map,
                panel,
                None,
                None,
                Palette::Diverging { limit: Some(limit) },
                &args.out.join(format!("{name}_lineup_{}.svg", i + 1)),
            )?;
        }
        let sources: Vec<serde_json::Value> = panels
            .sources
            .iter()
            .map(|s| s.map_or(json!("enacted"), |i| json!(loaded.plans.plan_names[i])))
            .collect();
        keys.insert(
            name.to_string(),
            json!({ "answer_panel": panels.answer + 1, "answer_index": panels.answer, "panels": sources }),
        );
    }
    let key_path = key.map(Path::to_path_buf).unwrap_or_else(|| args.out.join("lineup_key.json"));
    write_json(&key_path, &json!({ "seed": seed, "k": k, "normalized": normalized, "statistics": keys }))
}

fn cmd_validate(args: &PlanArgs, alphas: &[f64], holdouts: usize, side: Sidedness, seed: u64) -> projdist::Result<()> {
    let loaded = load(args)?;
    let ensemble = &loaded.plans.ensemble;
    for stat in &loaded.stats {
        let values = DistrictValues::evaluate(ensemble, stat)?;
        let report = fwer_validation(ensemble, &values, alphas, side, holdouts, seed)?;
        let mut body = String::from("alpha,holdouts,rejections,fwer,se\n");
        for row in &report.rows {
            body.push_str(&format!("{},{},{},{},{}\n", row.alpha, row.holdouts, row.rejections, row.fwer, row.se));
        }
        write_text(&args.out.join(format!("{}_fwer.csv", stat.name())), &body)?;
        let names: Vec<&str> = report.holdout_plans.iter().map(|&i| loaded.plans.plan_names[i].as_str()).collect();
        write_json(
            &args.out.join(format!("{}_fwer_holdouts.json", stat.name())),
            &json!({ "seed": seed, "sidedness": side, "holdouts": names }),
        )?;
    }
    Ok(())
}

fn cmd_fixture(args: &FixtureArgs) -> projdist::Result<()> {
    if args.rows == 0 || args.cols == 0 {
        return Err(Error::invalid("grid needs at least one row and one column"));
    }
    let partisan = match args.partisan {
        Partisan::Uniform => PartisanModel::Uniform { share: args.share },
        Partisan::Gradient => PartisanModel::LinearGradient { west: args.share, east: args.intensity },
        Partisan::Hotspot => PartisanModel::Hotspot {
            row: args.center_row,
            col: args.center_col.unwrap_or((args.cols as f64 - 1.0) / 2.0),
            radius: args.radius,
            intensity: args.intensity,
            base: args.share,
        },
    };
    let population = match args.pop_east {
        Some(east) => PopulationModel::LinearGradient { west: args.population, east },
        None => PopulationModel::Uniform { per_precinct: args.population },
    };
    let spec = GridSpec { population, ..GridSpec::uniform(args.rows, args.cols) }
        .with_partisan(partisan)
        .with_noise(args.noise, args.seed);
    let map = Arc::new(generate_grid_map(&spec)?);
    let planted = if args.planted {
        if args.districts != 4 {
            return Err(Error::invalid("--planted builds on the four-quadrant plan and needs --districts 4"));
        }
        let center = (args.center_row, args.center_col.unwrap_or((args.cols as f64 - 1.0) / 2.0));
        Some(pack_crack_north(&map, args.rows, args.cols, center, args.pop_tol)?)
    } else {
        None
    };
    let ensemble = sample_plans(map.clone(), args.districts, args.n, args.pop_tol, args.seed)?;

    out_dir(&args.out)?;
    write_map(&map, &args.out.join("map.csv"), &args.out.join("edges.csv"))?;
    write_ensemble(&ensemble, planted.as_ref().map(|p| &p.plan), &args.out.join("plans.csv"))?;
    let mut files = vec!["map.csv", "edges.csv", "plans.csv"];
    if let Some(p) = &planted {
        let mut body = String::from("id,perturbed\n");
        for (id, &t) in map.ids().iter().zip(&p.perturbed) {
            body.push_str(&format!("{id},{t}\n"));
        }
        write_text(&args.out.join("planted_truth.csv"), &body)?;
        files.push("planted_truth.csv");
    }
    let manifest = json!({
        "grid": spec,
        "districts": args.districts,
        "plans": args.n,
        "pop_tol": args.pop_tol,
        "seed": args.seed,
        "sampler": {
            "method": "uniform spanning tree (Wilson) with a balanced edge cut per district",
            "rng": "ChaCha8, stream = plan index",
            "draws_per_plan": DRAWS_PER_PLAN,
        },
        "planted": planted.as_ref().map(|p| json!({
            "construction": "pack_crack_north",
            "pack_label": p.pack_label,
            "crack_label": p.crack_label,
            "perturbed": p.perturbed.iter().filter(|&&t| t).count(),
        })),
        "files": files,
    });
    write_json(&args.out.join("manifest.json"), &manifest)
}

fn cmd_render(args: &RenderArgs) -> projdist::Result<()> {
    let map = Arc::new(load_map(&args.map.map, &args.map.edges)?);
    let field = read_field(&map, &args.field)?;
    let selection = args.selection.as_deref().map(|p| read_selection(&map, p)).transpose()?;
    let borders = match &args.borders {
        Some(path) => load_ensemble(map.clone(), path, args.borders_column.as_deref())?.enacted,
        None => None,
    };
    let geometry = match &args.geojson {
        Some(path) => Some(Geometry::from_geojson(&map, &read_json(path)?)?),
        None => Geometry::from_grid_columns(&map),
    };
    let Some(geometry) = geometry else {
        eprintln!("note: map has no grid columns and no --geojson was given; nothing rendered");
        return Ok(());
    };
    let palette = match args.palette {
        PaletteKind::Diverging => Palette::Diverging { limit: args.limit },
        PaletteKind::Sequential => Palette::Sequential { min: args.min, max: args.max },
    };
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        out_dir(parent)?;
    }
    let svg = render_svg(&map, &geometry, &field, selection.as_deref(), borders.as_ref().map(|p| p.labels()), palette);
    write_text(&args.out, &svg)
}
