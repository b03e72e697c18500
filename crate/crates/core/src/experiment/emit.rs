use crate::error::Result;
use crate::experiment::sweep::ResultsTable;

pub const CSV_HEADER: &str =
    "R,gen_mean,gen_se,bound_term1,bound_term2,bound_total,bound_se,emp_risk,pop_risk,proxy_delta,seconds";

fn real(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

pub fn emit_csv(table: &ResultsTable) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in &table.rows {
        let fields = [
            row.rounds.to_string(),
            real(row.gen.map(|e| e.mean)),
            real(row.gen.map(|e| e.se)),
            real(row.term1.map(|e| e.mean)),
            real(row.term2.map(|e| e.mean)),
            real(row.total.map(|e| e.mean)),
            real(row.total.map(|e| e.se)),
            real(row.emp_risk),
            real(row.pop_risk),
            real(row.proxy),
            real(row.seconds),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn emit_json(table: &ResultsTable) -> String {
    let mut s = serde_json::to_string_pretty(table).expect("results serialize");
    s.push('\n');
    s
}

pub fn parse_json(text: &str) -> Result<ResultsTable> {
    serde_json::from_str(text).map_err(|e| crate::error::Error::Parse { line: e.line(), message: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::config::parse_config;
    use crate::experiment::sweep::run_sweep;

    fn table() -> ResultsTable {
        let spec = parse_config("n = 4\nK = 2\nR = 1,2\nd = 1\ndist = gaussian_location\nM = 10\nM_inner = 2\neta = 0.3\n").unwrap();
        run_sweep(&spec).unwrap()
    }

    #[test]
    fn csv_layout() {
        let mut t = table();
        let csv = emit_csv(&t);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 3);
        let r1: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(r1.len(), 11);
        assert_eq!(r1[0], "1");
        assert_eq!(r1[4].parse::<f64>().unwrap(), 0.0);
        assert_eq!(r1[10], "");
        let mantissa = r1[1].trim_start_matches('-').split('e').next().unwrap();
        assert_eq!(mantissa.replace('.', "").len(), 17);

        t.rows.truncate(1);
        assert_eq!(emit_csv(&t).lines().count(), 2);
    }

    #[test]
    fn json_round_trip() {
        let t = table();
        assert_eq!(parse_json(&emit_json(&t)).unwrap(), t);
    }
}
