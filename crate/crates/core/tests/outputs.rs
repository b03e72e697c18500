use fedgen::error::Error;
use fedgen::experiment::{emit_csv, emit_json, emit_svg_plot, parse_config, parse_json, run_sweep, ResultsRow, ResultsTable, CSV_HEADER};
use fedgen::risk::MCEstimate;

const SINGLETON: &str = "n = 4\nK = 2\nR = 1,2,4\nd = 2\ndist = finite\nsupport = 0.5,-1\nM = 8\nM_inner = 2\n";

fn golden(name: &str) -> String {
    std::fs::read_to_string(std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap()
}

#[test]
fn csv_header_matches_golden_file() {
    assert_eq!(golden("header.csv").trim_end(), CSV_HEADER);
}

#[test]
fn singleton_sweep_matches_golden_file() {
    let table = run_sweep(&parse_config(SINGLETON).unwrap()).unwrap();
    assert_eq!(emit_csv(&table), golden("singleton.csv"));
}

#[test]
fn json_round_trips_a_real_sweep() {
    let spec = parse_config("n = 6\nK = 2\nR = 1,3\nd = 3\ndist = gaussian_linear\nw_star = 1,-2,0.5\nM = 12\nM_inner = 2\n").unwrap();
    let table = run_sweep(&spec).unwrap();
    let back = parse_json(&emit_json(&table)).unwrap();
    assert_eq!(back, table);
    assert_eq!(emit_csv(&back), emit_csv(&table));
    assert_eq!(parse_config(&back.metadata.spec_echo).unwrap(), spec);
}

fn synthetic(gen: &[f64], bound: &[f64]) -> ResultsTable {
    let spec = parse_config("n = 100\nK = 2\nR = 1,2,5,10,25\nd = 1\ndist = gaussian_location\n").unwrap();
    let rows = spec
        .rounds
        .iter()
        .zip(gen.iter().zip(bound))
        .map(|(&r, (&g, &b))| ResultsRow {
            rounds: r,
            gen: Some(MCEstimate { mean: g, se: 0.01, replicates: 100 }),
            term1: Some(MCEstimate::exact(b)),
            term2: Some(MCEstimate::exact(0.0)),
            total: Some(MCEstimate::exact(b)),
            emp_risk: Some(1.0),
            pop_risk: Some(1.0 + g),
            proxy: Some(g),
            seconds: None,
            breakdown: None,
        })
        .collect();
    let table = run_sweep(&parse_config("n = 1\nK = 1\nR = 1\nd = 1\ndist = finite\nsupport = 0\nM = 1\n").unwrap()).unwrap();
    ResultsTable { metadata: fedgen::experiment::TableMetadata { spec_echo: spec.to_config_text(), spec, ..table.metadata }, rows }
}

fn polyline_points(svg: &str, class: &str) -> Vec<(f64, f64)> {
    let doc = roxmltree::Document::parse(svg).unwrap();
    let node = doc.descendants().find(|n| n.has_tag_name("polyline") && n.attribute("class") == Some(class)).unwrap();
    node.attribute("points")
        .unwrap()
        .split_whitespace()
        .map(|p| {
            let (x, y) = p.split_once(',').unwrap();
            (x.parse().unwrap(), y.parse().unwrap())
        })
        .collect()
}

#[test]
fn svg_structure_and_monotone_screen_coordinates() {
    let table = synthetic(&[0.01, 0.02, 0.025, 0.03, 0.05], &[0.1, 0.2, 0.3, 0.35, 0.6]);
    let svg = emit_svg_plot(&table).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let root = doc.root_element();
    assert_eq!(root.tag_name().name(), "svg");
    assert_eq!(root.attribute("version"), Some("1.1"));
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("polyline")).count(), 2);
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("polygon")).count(), 1);
    assert!(doc.descendants().any(|n| n.has_tag_name("desc") && n.text().unwrap_or("").contains("R = 1,2,5,10,25")));
    assert!(svg.contains("communication rounds R"));
    assert!(svg.contains("bound total"));

    let bound = polyline_points(&svg, "bound");
    assert_eq!(bound.len(), 5);
    for w in bound.windows(2) {
        assert!(w[1].0 > w[0].0, "x increases with R");
        assert!(w[1].1 < w[0].1, "larger bound is drawn higher");
    }
    let gen = polyline_points(&svg, "gen");
    for w in gen.windows(2) {
        assert!(w[1].1 < w[0].1);
    }
    let spacing = |i: usize| bound[i + 1].0 - bound[i].0;
    let ratio = spacing(0) / spacing(2);
    assert!((ratio - 1.0).abs() < 1e-2, "R 1→2 and 5→10 are equally spaced on a log axis");
}

#[test]
fn svg_needs_two_rows_and_both_series() {
    let mut table = synthetic(&[0.0; 5], &[0.0; 5]);
    table.rows.truncate(1);
    assert!(matches!(emit_svg_plot(&table), Err(Error::TooFewRows { needed: 2, got: 1 })));
    let mut table = synthetic(&[0.0; 5], &[1.0; 5]);
    table.rows[2].total = None;
    assert!(emit_svg_plot(&table).is_err());
}

#[test]
fn svg_escapes_metadata() {
    let mut table = synthetic(&[0.0; 5], &[1.0; 5]);
    table.metadata.spec_echo.push_str("out = a<b>&c.csv\n");
    let svg = emit_svg_plot(&table).unwrap();
    assert!(roxmltree::Document::parse(&svg).is_ok());
    assert!(svg.contains("a&lt;b&gt;&amp;c.csv"));
}
