//! Run persistence: CSV logs, metrics JSON, artifact dumps, and the
//! plot-ready reshaping of finished runs.
//!
//! All numeric cells use Rust's shortest round-trip float formatting, so a
//! deterministic run writes byte-identical logs (wall-clock columns aside).
//! Missing values are written as `NaN` and infinite clearances as `inf`;
//! both re-parse with `str::parse::<f64>()`.

use super::{summarize, RunResult, SimError};
use crate::controller::TickRecord;
use crate::lbf::BarrierNet;
use crate::nmpc::SolveStatus;
use crate::sensing::Dataset;
use serde::Serialize;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SimError + '_ {
    move |source| SimError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), SimError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(contents.as_bytes()).map_err(io_err(path))
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NaN".to_string(), fmt)
}

fn status_str(s: Option<SolveStatus>) -> &'static str {
    match s {
        Some(SolveStatus::Converged) => "converged",
        Some(SolveStatus::MaxIterations) => "max_iterations",
        Some(SolveStatus::Infeasible) => "infeasible",
        None => "none",
    }
}

fn trajectory_row(tick: usize, r: &TickRecord) -> String {
    format!(
        "{tick},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
        fmt(r.time),
        fmt(r.pose.x),
        fmt(r.pose.y),
        fmt(r.pose.theta),
        fmt(r.applied.v),
        fmt(r.applied.omega),
        fmt(r.distance_to_goal),
        status_str(r.solver_status),
        r.sqp_iterations,
        fmt(r.solve_time_s),
        fmt_opt(r.train_loss),
        fmt(r.train_time_s),
        fmt_opt(r.min_h_horizon),
    )
}

fn telemetry_row(tick: usize, r: &TickRecord) -> String {
    format!(
        "{tick},{},{},{},{},{},{},{},{}\n",
        fmt(r.time),
        status_str(r.solver_status),
        r.sqp_iterations,
        fmt_opt(r.objective),
        fmt_opt(r.max_eq_violation),
        fmt_opt(r.max_cbc_violation),
        fmt_opt(r.min_cbc_residual),
        fmt(r.solve_time_s),
    )
}

/// Writes the full log set for a finished run under `out_dir`: per robot
/// `trajectory_<id>.csv` and `telemetry_<id>.csv`, the global
/// `clearance.csv`, and `metrics.json`.
pub fn write_logs(result: &RunResult, out_dir: &Path) -> Result<(), SimError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    for (i, id) in result.robot_ids.iter().enumerate() {
        let mut traj = String::from(
            "tick,time_s,x_m,y_m,theta_rad,v_mps,omega_radps,dist_to_goal_m,\
             solver_status,sqp_iters,solve_time_s,train_loss,train_time_s,min_hhat_horizon\n",
        );
        let mut telem = String::from(
            "tick,time_s,solver_status,sqp_iters,objective,max_eq_violation,\
             max_cbc_violation,min_cbc_residual,solve_time_s\n",
        );
        for (tick, r) in result.records[i].iter().enumerate() {
            traj.push_str(&trajectory_row(tick, r));
            telem.push_str(&telemetry_row(tick, r));
        }
        write_file(&out_dir.join(format!("trajectory_{id}.csv")), &traj)?;
        write_file(&out_dir.join(format!("telemetry_{id}.csv")), &telem)?;
    }

    let mut clear = String::from("tick,time_s,min_clearance_m,robot_robot_m,robot_obstacle_m\n");
    for s in &result.clearance_series {
        clear.push_str(&format!(
            "{},{},{},{},{}\n",
            s.tick,
            fmt(s.time_s),
            fmt(s.min()),
            fmt(s.robot_robot),
            fmt(s.robot_obstacle),
        ));
    }
    write_file(&out_dir.join("clearance.csv"), &clear)?;

    let metrics = summarize(result);
    let json = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
    write_file(&out_dir.join("metrics.json"), &json)
}

#[derive(Serialize)]
struct NetDump {
    layer_sizes: Vec<usize>,
    /// Per layer, the weight matrix as rows (input dimension) of columns
    /// (output dimension).
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
}

/// Dumps a network's parameters as JSON.
pub fn write_weights(net: &BarrierNet, path: &Path) -> Result<(), SimError> {
    let dump = NetDump {
        layer_sizes: net.layer_sizes().to_vec(),
        weights: net
            .weights()
            .iter()
            .map(|w| {
                (0..w.nrows())
                    .map(|r| w.row(r).iter().copied().collect())
                    .collect()
            })
            .collect(),
        biases: net.biases().iter().map(|b| b.iter().copied().collect()).collect(),
    };
    let json = serde_json::to_string_pretty(&dump).expect("weights serialize");
    write_file(path, &json)
}

/// Dumps one training dataset as CSV.
pub fn write_dataset(data: &Dataset, path: &Path) -> Result<(), SimError> {
    let mut out = String::from("x_m,y_m,label_m\n");
    for (p, l) in data.inputs.iter().zip(&data.labels) {
        out.push_str(&format!("{},{},{}\n", fmt(p.x), fmt(p.y), fmt(*l)));
    }
    write_file(path, &out)
}

/// Columns extracted from one trajectory CSV, kept verbatim as strings.
struct TrajectoryColumns {
    id: String,
    time_s: Vec<String>,
    dist: Vec<String>,
    v: Vec<String>,
    omega: Vec<String>,
}

fn read_trajectory(path: &Path, id: &str) -> Result<TrajectoryColumns, SimError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut cols = TrajectoryColumns {
        id: id.to_string(),
        time_s: Vec::new(),
        dist: Vec::new(),
        v: Vec::new(),
        omega: Vec::new(),
    };
    for (n, line) in text.lines().enumerate() {
        if n == 0 || line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 14 {
            return Err(SimError::Parse {
                path: path.to_path_buf(),
                message: format!("line {}: expected 14 columns, got {}", n + 1, f.len()),
            });
        }
        cols.time_s.push(f[1].to_string());
        cols.v.push(f[5].to_string());
        cols.omega.push(f[6].to_string());
        cols.dist.push(f[7].to_string());
    }
    Ok(cols)
}

/// Reshapes a finished run's per-robot trajectory logs into two wide CSVs
/// ready for plotting: `plot_distance_to_goal.csv` (time and one distance
/// column per robot) and `plot_control_inputs.csv` (time and per-robot v
/// and omega columns). Robots that finish early leave trailing cells empty.
pub fn write_plot_data(run_dir: &Path) -> Result<(), SimError> {
    let mut files: Vec<(String, PathBuf)> = Vec::new();
    for entry in fs::read_dir(run_dir).map_err(io_err(run_dir))? {
        let entry = entry.map_err(io_err(run_dir))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name
            .strip_prefix("trajectory_")
            .and_then(|s| s.strip_suffix(".csv"))
        {
            files.push((id.to_string(), entry.path()));
        }
    }
    if files.is_empty() {
        return Err(SimError::Parse {
            path: run_dir.to_path_buf(),
            message: "no trajectory_<id>.csv files found".into(),
        });
    }
    files.sort();
    let robots: Vec<TrajectoryColumns> = files
        .iter()
        .map(|(id, path)| read_trajectory(path, id))
        .collect::<Result<_, _>>()?;
    let rows = robots.iter().map(|r| r.time_s.len()).max().unwrap_or(0);
    let time_at = |row: usize| -> &str {
        robots
            .iter()
            .find(|r| row < r.time_s.len())
            .map_or("", |r| &r.time_s[row])
    };

    let mut dist = String::from("time_s");
    for r in &robots {
        dist.push_str(&format!(",dist_to_goal_{}", r.id));
    }
    dist.push('\n');
    let mut inputs = String::from("time_s");
    for r in &robots {
        inputs.push_str(&format!(",v_{0},omega_{0}", r.id));
    }
    inputs.push('\n');
    for row in 0..rows {
        dist.push_str(time_at(row));
        inputs.push_str(time_at(row));
        for r in &robots {
            let (d, v, w) = if row < r.time_s.len() {
                (r.dist[row].as_str(), r.v[row].as_str(), r.omega[row].as_str())
            } else {
                ("", "", "")
            };
            dist.push(',');
            dist.push_str(d);
            inputs.push(',');
            inputs.push_str(v);
            inputs.push(',');
            inputs.push_str(w);
        }
        dist.push('\n');
        inputs.push('\n');
    }
    write_file(&run_dir.join("plot_distance_to_goal.csv"), &dist)?;
    write_file(&run_dir.join("plot_control_inputs.csv"), &inputs)
}
