use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use projdist::fixtures::{generate_grid_map, sample_plans, GridSpec, PartisanModel};
use projdist::io::{load_ensemble, load_map, read_field, write_ensemble, write_field, write_map};
use projdist::model::{validate_plan, Ensemble, Label, Plan, PrecinctField, PrecinctMap};
use projdist::Error;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, body).unwrap();
    path
}

fn grid_files(dir: &TempDir, rows: usize, cols: usize, population: f64) -> (PathBuf, PathBuf) {
    let mut attrs = String::from("id,population,area,exterior_boundary_length,votes_dem,votes_rep\n");
    let mut edges = String::from("id_a,id_b,shared_boundary_length\n");
    for r in 0..rows {
        for c in 0..cols {
            let degree = [r > 0, r + 1 < rows, c > 0, c + 1 < cols].iter().filter(|&&b| b).count();
            attrs.push_str(&format!("p{r}_{c},{population},1,{},{},{}\n", 4 - degree, 10 + r, 10 + c));
            if c + 1 < cols {
                edges.push_str(&format!("p{r}_{c},p{r}_{},1\n", c + 1));
            }
            if r + 1 < rows {
                edges.push_str(&format!("p{r}_{c},p{}_{c},1\n", r + 1));
            }
        }
    }
    (write(dir, "attrs.csv", &attrs), write(dir, "edges.csv", &edges))
}

fn load_err(attrs: &Path, edges: &Path) -> Error {
    load_map(attrs, edges).unwrap_err()
}

#[test]
fn two_by_two_grid_loads() {
    let dir = TempDir::new().unwrap();
    let (a, e) = grid_files(&dir, 2, 2, 100.0);
    let map = load_map(&a, &e).unwrap();
    assert_eq!(map.len(), 4);
    assert_eq!(map.edges().len(), 4);
}

#[test]
fn five_by_five_grid_edge_count_and_population() {
    let dir = TempDir::new().unwrap();
    let (a, e) = grid_files(&dir, 5, 5, 100.0);
    let map = load_map(&a, &e).unwrap();
    assert_eq!(map.len(), 25);
    assert_eq!(map.edges().len(), 2 * 5 * 5 - 5 - 5);
    assert_eq!(map.total_population(), 2500.0);
}

#[test]
fn unknown_edge_id_is_named() {
    let dir = TempDir::new().unwrap();
    let (a, _) = grid_files(&dir, 2, 2, 100.0);
    let e = write(&dir, "bad_edges.csv", "id_a,id_b,shared_boundary_length\np0_0,p0_1,1\np0_0,Z9,1\n");
    let err = load_err(&a, &e);
    let msg = err.to_string();
    assert!(matches!(err, Error::Parse { line: 3, .. }), "{msg}");
    assert!(msg.contains("Z9"), "{msg}");
}

#[test]
fn malformed_row_reports_line() {
    let dir = TempDir::new().unwrap();
    let a = write(
        &dir,
        "attrs.csv",
        "id,population,area,exterior_boundary_length\nA,10,1,3\nB,ten,1,3\n",
    );
    let e = write(&dir, "edges.csv", "id_a,id_b,shared_boundary_length\nA,B,1\n");
    match load_err(&a, &e) {
        Error::Parse { line, message, .. } => {
            assert_eq!(line, 3);
            assert!(message.contains("ten"));
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn disconnected_graph_lists_components() {
    let dir = TempDir::new().unwrap();
    let a = write(
        &dir,
        "attrs.csv",
        "id,population,area,exterior_boundary_length\nA,10,1,3\nB,10,1,3\nC,10,1,4\n",
    );
    let e = write(&dir, "edges.csv", "id_a,id_b,shared_boundary_length\nA,B,1\n");
    match load_err(&a, &e) {
        Error::Disconnected { components } => {
            assert_eq!(components, vec![vec!["A".to_string(), "B".to_string()], vec!["C".to_string()]]);
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn negative_weight_and_bad_area_rejected() {
    let dir = TempDir::new().unwrap();
    let e = write(&dir, "edges.csv", "id_a,id_b,shared_boundary_length\nA,B,1\n");
    let neg = write(&dir, "neg.csv", "id,population,area,exterior_boundary_length\nA,-1,1,3\nB,10,1,3\n");
    assert!(matches!(load_err(&neg, &e), Error::Invalid(m) if m.contains("population")));
    let zero_area = write(&dir, "area.csv", "id,population,area,exterior_boundary_length\nA,1,0,3\nB,10,1,3\n");
    assert!(matches!(load_err(&zero_area, &e), Error::Invalid(m) if m.contains("area")));
    let a = write(&dir, "ok.csv", "id,population,area,exterior_boundary_length\nA,1,1,3\nB,10,1,3\n");
    let dup = write(&dir, "dup.csv", "id_a,id_b,shared_boundary_length\nA,B,1\nB,A,1\n");
    assert!(matches!(load_err(&a, &dup), Error::Invalid(_)));
    let selfloop = write(&dir, "self.csv", "id_a,id_b,shared_boundary_length\nA,B,1\nA,A,1\n");
    assert!(matches!(load_err(&a, &selfloop), Error::Invalid(_)));
}

#[test]
fn missing_file_is_io_error() {
    let dir = TempDir::new().unwrap();
    let (a, _) = grid_files(&dir, 2, 2, 100.0);
    let err = load_err(&a, &dir.path().join("nope.csv"));
    assert!(err.is_io());
}

fn generated(rows: usize, cols: usize) -> Arc<PrecinctMap> {
    let spec = GridSpec::uniform(rows, cols)
        .with_partisan(PartisanModel::LinearGradient { west: 0.31, east: 0.69 })
        .with_noise(0.05, 9);
    Arc::new(generate_grid_map(&spec).unwrap())
}

#[test]
fn map_round_trip_is_bit_exact() {
    let dir = TempDir::new().unwrap();
    let map = generated(4, 5);
    let (a, e) = (dir.path().join("a.csv"), dir.path().join("e.csv"));
    write_map(&map, &a, &e).unwrap();
    let back = load_map(&a, &e).unwrap();
    assert_eq!(back.ids(), map.ids());
    assert_eq!(back.regions(), map.regions());
    assert_eq!(back.edges(), map.edges());
    for col in map.columns() {
        let other = back.column(&col.name).unwrap();
        assert!(col.values.iter().zip(other).all(|(x, y)| x.to_bits() == y.to_bits()), "{}", col.name);
    }
}

#[test]
fn ensemble_round_trip_with_enacted() {
    let dir = TempDir::new().unwrap();
    let map = generated(4, 4);
    let ensemble = sample_plans(map.clone(), 4, 30, 0.0, 3).unwrap();
    let enacted = ensemble.plan(7).to_plan();
    let path = dir.path().join("plans.csv");
    write_ensemble(&ensemble, Some(&enacted), &path).unwrap();
    let loaded = load_ensemble(map.clone(), &path, Some("enacted")).unwrap();
    assert_eq!(loaded.ensemble.raw_labels(), ensemble.raw_labels());
    assert_eq!(loaded.enacted.as_ref(), Some(&enacted));
    assert_eq!(loaded.plan_names.len(), 30);
    assert_eq!(loaded.plan_names[0], "plan_1");
}

#[test]
fn field_round_trip_keeps_missing() {
    let dir = TempDir::new().unwrap();
    let map = generated(2, 2);
    let field = PrecinctField::new(vec![Some(0.1), None, Some(-3.25e-7), Some(1.0 / 3.0)]);
    let path = dir.path().join("f.csv");
    write_field(&map, &field, &path).unwrap();
    assert_eq!(read_field(&map, &path).unwrap(), field);
}

fn matrix(rows: usize, plans: &[Vec<Label>]) -> String {
    let mut s = String::from("id");
    for k in 0..plans.len() {
        s.push_str(&format!(",plan_{}", k + 1));
    }
    s.push('\n');
    for v in 0..rows {
        s.push_str(&format!("r{}c{}", v / 5, v % 5));
        for p in plans {
            s.push_str(&format!(",{}", p[v]));
        }
        s.push('\n');
    }
    s
}

#[test]
fn single_column_of_ones() {
    let dir = TempDir::new().unwrap();
    let map = generated(5, 5);
    let p = write(&dir, "one.csv", &matrix(25, &[vec![1; 25]]));
    let loaded = load_ensemble(map, &p, None).unwrap();
    assert_eq!(loaded.ensemble.len(), 1);
    assert_eq!(loaded.ensemble.districts(), 1);
}

#[test]
fn hundred_columns() {
    let dir = TempDir::new().unwrap();
    let map = generated(5, 5);
    let plans: Vec<Vec<Label>> = (0..100).map(|k| (0..25).map(|v| 1 + ((v + k) % 3) as Label).collect()).collect();
    let p = write(&dir, "many.csv", &matrix(25, &plans));
    assert_eq!(load_ensemble(map, &p, None).unwrap().ensemble.len(), 100);
}

#[test]
fn label_gap_names_plan_column() {
    let dir = TempDir::new().unwrap();
    let map = generated(5, 5);
    let mut plans: Vec<Vec<Label>> = (0..20).map(|_| (0..25).map(|v| 1 + (v % 3) as Label).collect()).collect();
    plans[16] = (0..25).map(|v| 1 + (v % 2) as Label).collect();
    plans[0][0] = 3;
    let p = write(&dir, "gap.csv", &matrix(25, &plans));
    let err = load_ensemble(map, &p, None).unwrap_err();
    assert_eq!(err.to_string(), "plan 17: district 3 empty");
}

#[test]
fn row_count_mismatch() {
    let dir = TempDir::new().unwrap();
    let map = generated(5, 5);
    let p = write(&dir, "short.csv", &matrix(24, &[vec![1; 25]]));
    assert!(load_ensemble(map, &p, None).is_err());
}

#[test]
fn validate_plan_examples() {
    let dir = TempDir::new().unwrap();
    let (a, e) = grid_files(&dir, 2, 2, 100.0);
    let map = load_map(&a, &e).unwrap();
    let report = validate_plan(&map, Plan::new(vec![1, 1, 2, 2], 2).unwrap().view(), 0.0);
    assert_eq!(report.max_abs_deviation(), 0.0);
    assert!(report.all_contiguous());
    let diagonal = validate_plan(&map, Plan::new(vec![1, 2, 2, 1], 2).unwrap().view(), 0.0);
    assert_eq!(diagonal.contiguous, vec![false, false]);

    let a = write(
        &dir,
        "uneven.csv",
        "id,population,area,exterior_boundary_length\np0_0,100,1,2\np0_1,100,1,2\np1_0,100,1,2\np1_1,104,1,2\n",
    );
    let map = load_map(&a, &e).unwrap();
    let report = validate_plan(&map, Plan::new(vec![1, 1, 2, 2], 2).unwrap().view(), 0.0);
    let ideal = 404.0 / 2.0;
    assert!((report.deviations[0] - (200.0 / ideal - 1.0)).abs() < 1e-12);
    assert!((report.deviations[1] - (204.0 / ideal - 1.0)).abs() < 1e-12);
    assert!((report.deviations[0] + 0.0099).abs() < 1e-4);
}

fn bfs_connected(map: &PrecinctMap, members: &[usize]) -> bool {
    let inside: std::collections::HashSet<usize> = members.iter().copied().collect();
    let mut seen = std::collections::HashSet::from([members[0]]);
    let mut queue = VecDeque::from([members[0]]);
    while let Some(u) = queue.pop_front() {
        for e in map.edges() {
            let w = if e.a == u { e.b } else if e.b == u { e.a } else { continue };
            if inside.contains(&w) && seen.insert(w) {
                queue.push_back(w);
            }
        }
    }
    seen.len() == members.len()
}

#[test]
fn contiguity_agrees_with_bfs_on_random_labelings() {
    let map = generated(4, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..300 {
        let mut labels: Vec<Label> = (0..16).map(|v| 1 + (v % 3) as Label).collect();
        labels.shuffle(&mut rng);
        let plan = Plan::new(labels.clone(), 3).unwrap();
        let report = validate_plan(&map, plan.view(), 1.0);
        for j in 0..3 {
            let members: Vec<usize> = (0..16).filter(|&v| labels[v] as usize == j + 1).collect();
            assert_eq!(report.contiguous[j], bfs_connected(&map, &members));
        }
    }
}

#[test]
fn district_populations_invariant_under_relabeling() {
    let map = generated(4, 4);
    let ensemble: Ensemble = sample_plans(map.clone(), 4, 20, 0.25, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for plan in ensemble.plans() {
        let mut perm: Vec<Label> = (1..=4).collect();
        perm.shuffle(&mut rng);
        let relabeled = Plan::new(plan.labels().iter().map(|&l| perm[l as usize - 1]).collect(), 4).unwrap();
        let sorted = |mut p: Vec<f64>| {
            p.sort_by(f64::total_cmp);
            p
        };
        assert_eq!(
            sorted(validate_plan(&map, plan, 0.0).populations),
            sorted(validate_plan(&map, relabeled.view(), 0.0).populations)
        );
    }
}
