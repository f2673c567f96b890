use scwqkd_core::config::config_to_text;
use scwqkd_core::session::{SessionConfig, SessionReport};

/// Rounds to 12 significant digits.
pub fn round12(x: f64) -> f64 {
    format!("{x:.11e}").parse().unwrap_or(x)
}

/// Shortest decimal that reads back as `x` rounded to 12 significant digits.
pub fn sig12(x: f64) -> String {
    let r = round12(x);
    if r == 0.0 {
        return "0".into();
    }
    let plain = format!("{r}");
    if plain.len() <= 24 {
        plain
    } else {
        format!("{r:e}")
    }
}

/// `# `-prefixed lines recording the generator, seed and resolved config.
pub fn header_lines(command: &str, config: &SessionConfig) -> Vec<String> {
    let mut lines = vec![
        format!("# scwqkd {} {command}", env!("CARGO_PKG_VERSION")),
        format!("# seed = {}", config.seed),
    ];
    lines.extend(
        config_to_text(config)
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| format!("# {}", l.trim_end())),
    );
    lines
}

pub fn blocks_csv(report: &SessionReport, command: &str) -> String {
    let mut out = String::new();
    for l in header_lines(command, &report.metadata.config) {
        out.push_str(&l);
        out.push('\n');
    }
    if !report.metadata.calibrated.is_empty() {
        out.push_str(&format!(
            "# calibrated = {}\n",
            report.metadata.calibrated.join(",")
        ));
    }
    out.push_str(
        "block_index,clicks,sifted_bits,processed_bits,qber,qber_estimate,leaked_bits,corrected_bits,secret_bits,aborted,abort_reason,keys_match\n",
    );
    let opt = |v: Option<f64>| v.map_or(String::new(), sig12);
    for b in &report.blocks {
        let reason = b
            .abort_reason
            .and_then(|r| serde_json::to_value(r).ok())
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            b.block_index,
            b.clicks,
            b.sifted_bits,
            b.processed_bits,
            opt(b.qber),
            opt(b.qber_estimate),
            b.leaked_bits,
            b.corrected_bits,
            b.secret_bits,
            b.aborted,
            reason,
            b.keys_match
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sig12_examples() {
        assert_eq!(sig12(37.0), "37");
        assert_eq!(sig12(0.02046968206087108), "0.0204696820609");
        assert_eq!(sig12(255.49198063354875), "255.491980634");
        assert_eq!(sig12(0.0), "0");
        assert_eq!(sig12(1.5e-30), "1.5e-30");
    }

    proptest! {
        #[test]
        fn csv_values_roundtrip(x in -1e30f64..1e30) {
            let s = sig12(x);
            let back: f64 = s.parse().unwrap();
            prop_assert_eq!(back, round12(x));
            prop_assert_eq!(sig12(back), s);
        }
    }
}
