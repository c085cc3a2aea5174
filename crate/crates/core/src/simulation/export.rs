use std::io::{self, Write};

use super::{EnergyCertificate, Trajectory};
use crate::matrix::Vector;

/// `key=value` lines written after the data rows.
#[derive(Debug, Clone, Default)]
pub struct CsvFooter {
    pub entries: Vec<(String, String)>,
}

impl CsvFooter {
    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn with_certificate(cert: &EnergyCertificate) -> Self {
        let mut f = Self::default();
        f.push("gamma", cert.gamma);
        f.push("beta", cert.beta);
        f.push("energy_lhs", cert.lhs);
        f.push("energy_rhs", cert.rhs);
        f.push("satisfied", cert.satisfied);
        f
    }
}

fn names(prefix: &str, n: usize, out: &mut Vec<String>) {
    if n == 1 {
        out.push(prefix.to_string());
    } else {
        out.extend((1..=n).map(|i| format!("{prefix}{i}")));
    }
}

/// One comma-separated row per grid point with columns
/// `t, x.., w.., z.., zhat.., e.., v.., u.., y.., slip`, then the footer.
/// Numbers use the shortest representation that round-trips.
pub fn write_trajectory_csv<W: Write>(out: &mut W, traj: &Trajectory, footer: &CsvFooter) -> io::Result<()> {
    let dim = |v: &[Vector]| v.first().map_or(0, |x| x.len());
    let groups: [(&str, &[Vector]); 8] = [
        ("x", &traj.x),
        ("w", &traj.w),
        ("z", &traj.z),
        ("zhat", &traj.z_hat),
        ("e", &traj.e),
        ("v", &traj.v),
        ("u", &traj.u),
        ("y", &traj.y),
    ];
    let mut header = vec!["t".to_string()];
    for (name, data) in &groups {
        names(name, dim(data), &mut header);
    }
    header.push("constraint_residual".to_string());
    writeln!(out, "{}", header.join(","))?;
    let mut row = String::new();
    for k in 0..traj.grid.len() {
        row.clear();
        row.push_str(&traj.grid.time(k).to_string());
        for (_, data) in &groups {
            for c in data[k].iter() {
                row.push(',');
                row.push_str(&c.to_string());
            }
        }
        row.push(',');
        row.push_str(&traj.constraint_residual[k].to_string());
        writeln!(out, "{row}")?;
    }
    for (key, value) in &footer.entries {
        writeln!(out, "{key}={value}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::{cosimulate, DescriptorSimulator, FnSignal, Grid, HeldSignal};
    use crate::synthesis::FilterRealization;
    use crate::system::RollingDiscParams;
    use crate::Mat;

    #[test]
    fn csv_layout() {
        let sys = RollingDiscParams::default().descriptor_system().unwrap();
        let filt = FilterRealization::from_ntlm(
            Mat::from_element(1, 1, -1.0),
            Mat::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
            Mat::zeros(1, 2),
            Mat::zeros(1, 2),
        );
        let grid = Grid::new(0.0, 0.1, 0.05).unwrap();
        let sim = DescriptorSimulator::new(&sys).unwrap();
        let u = FnSignal::sine(1, 0.2, 1.0);
        let v = HeldSignal::zeros(1, &grid);
        let traj = cosimulate(
            &sim,
            &filt,
            &Vector::from_vec(vec![0.1, 0.2, 0.1]),
            &Vector::zeros(1),
            &u,
            &v,
            &grid,
        )
        .unwrap();
        let cert = traj.energy_certificate(1.4, 0.1);
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &traj, &CsvFooter::with_certificate(&cert)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x1,x2,x3,w,z,zhat,e,v,u,y1,y2,constraint_residual");
        assert_eq!(lines.len(), 1 + 3 + 5);
        let first: Vec<f64> = lines[1].split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(first.len(), 13);
        assert_eq!(first[1], traj.x[0][0]);
        assert!(lines[4].starts_with("gamma=1.4"));
        assert_eq!(lines[8], format!("satisfied={}", cert.satisfied));
    }
}
