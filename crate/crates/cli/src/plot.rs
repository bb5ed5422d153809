//! SVG diagnostic plots.

use std::collections::BTreeSet;
use std::f64::consts::TAU;
use std::fmt::Display;

use num_complex::Complex64;
use plotters::coord::Shift;
use plotters::prelude::*;
use plotters::style::colors::colormaps::ViridisRGB;
use plotters::style::text_anchor::{HPos, Pos, VPos};

use lossforge::domain::{FrequencyTrace, HangerParams};
use lossforge::extraction::LossBudget;
use lossforge::pipeline::ModeSweep;
use lossforge::sensitivity::SensitivityMap;
use lossforge::sweep::SweepPlan;

use crate::error::{CliError, Result};

const WIDE: (u32, u32) = (1100, 480);
const FONT: &str = "sans-serif";

fn err<E: Display>(e: E) -> CliError {
    CliError::Validation(format!("plot: {e}"))
}

fn render(size: (u32, u32), draw: impl FnOnce(&DrawingArea<SVGBackend, Shift>) -> Result<()>) -> Result<String> {
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, size).into_drawing_area();
        root.fill(&WHITE).map_err(err)?;
        draw(&root)?;
        root.present().map_err(err)?;
    }
    Ok(svg)
}

/// Range covering `values` with a fractional margin on each side.
fn padded(values: impl Iterator<Item = f64>, margin: f64) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    let pad = ((hi - lo) * margin).max(1e-12 * hi.abs().max(1.0));
    (lo - pad, hi + pad)
}

fn log_padded(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = padded(values.filter(|v| *v > 0.0).map(f64::log10), 0.08);
    (10f64.powf(lo), 10f64.powf(hi))
}

/// Data and model with the environment (amplitude, phase offset, delay) divided out.
fn normalized(p: &HangerParams, f: f64, z: Complex64) -> Complex64 {
    z / Complex64::from_polar(p.amplitude_a, p.alpha - TAU * f * p.tau)
}

pub fn hanger_fit(trace: &FrequencyTrace, p: &HangerParams) -> Result<String> {
    let data: Vec<(f64, Complex64)> = trace.points().map(|(f, z)| (f, normalized(p, f, z))).collect();
    let (f0, f1) = trace.span();
    let model: Vec<(f64, Complex64)> = (0..=600)
        .map(|k| {
            let f = f0 + (f1 - f0) * k as f64 / 600.0;
            (f, normalized(p, f, p.evaluate(f)))
        })
        .collect();
    let detuning = |f: f64| 2.0 * p.q_loaded * (f / p.fr - 1.0);
    render(WIDE, |root| {
        let (left, right) = root.split_horizontally(WIDE.0 / 2);
        let all = data.iter().chain(&model).map(|(_, z)| *z);
        let (re0, re1) = padded(all.clone().map(|z| z.re), 0.05);
        let (im0, im1) = padded(all.map(|z| z.im), 0.05);
        let half = 0.5 * (re1 - re0).max(im1 - im0);
        let (cr, ci) = (0.5 * (re0 + re1), 0.5 * (im0 + im1));
        let mut c = ChartBuilder::on(&left)
            .caption(format!("{}: normalized S21", trace.label()), (FONT, 18))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(52)
            .build_cartesian_2d(cr - half..cr + half, ci - half..ci + half)
            .map_err(err)?;
        c.configure_mesh().x_desc("Re").y_desc("Im").draw().map_err(err)?;
        c.draw_series(data.iter().map(|(_, z)| Circle::new((z.re, z.im), 2, BLUE.filled())))
            .map_err(err)?
            .label("data")
            .legend(|(x, y)| Circle::new((x, y), 3, BLUE.filled()));
        c.draw_series(LineSeries::new(model.iter().map(|(_, z)| (z.re, z.im)), RED.stroke_width(2)))
            .map_err(err)?
            .label("fit")
            .legend(|(x, y)| PathElement::new(vec![(x - 8, y), (x + 8, y)], RED));
        c.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(err)?;

        let (x0, x1) = padded(data.iter().map(|(f, _)| detuning(*f)), 0.02);
        let (y0, y1) = padded(data.iter().chain(&model).map(|(_, z)| z.arg()), 0.08);
        let mut c = ChartBuilder::on(&right)
            .caption(format!("Q_L = {:.4e}, fr = {:.6} GHz", p.q_loaded, p.fr / 1e9), (FONT, 18))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(52)
            .build_cartesian_2d(x0..x1, y0..y1)
            .map_err(err)?;
        c.configure_mesh()
            .x_desc("detuning 2 Q_L (f/fr - 1)")
            .y_desc("phase (rad)")
            .draw()
            .map_err(err)?;
        c.draw_series(data.iter().map(|(f, z)| Circle::new((detuning(*f), z.arg()), 2, BLUE.filled())))
            .map_err(err)?;
        c.draw_series(LineSeries::new(model.iter().map(|(f, z)| (detuning(*f), z.arg())), RED.stroke_width(2)))
            .map_err(err)?;
        Ok(())
    })
}

pub fn q_vs_photon_number(sweeps: &[ModeSweep]) -> Result<String> {
    let points = || sweeps.iter().flat_map(|s| s.points.iter());
    let (n0, n1) = log_padded(points().map(|p| p.photon_number));
    let (q0, q1) = log_padded(points().flat_map(|p| [p.q_int - p.q_int_sigma, p.q_int + p.q_int_sigma]).chain(points().map(|p| p.q_int)));
    render((760, 520), |root| {
        let mut c = ChartBuilder::on(root)
            .caption("Internal Q vs photon number", (FONT, 20))
            .margin(14)
            .x_label_area_size(40)
            .y_label_area_size(64)
            .build_cartesian_2d((n0..n1).log_scale(), (q0..q1).log_scale().with_key_points(one_two_five(q0, q1)))
            .map_err(err)?;
        c.configure_mesh()
            .x_desc("mean photon number")
            .y_desc("Q_int")
            .x_label_formatter(&|v| format!("{v:.0e}"))
            .y_label_formatter(&|v| format!("{v:.1e}"))
            .draw()
            .map_err(err)?;
        for (k, s) in sweeps.iter().enumerate() {
            let color = Palette99::pick(k).to_rgba();
            c.draw_series(s.points.iter().map(|p| {
                let lo = (p.q_int - p.q_int_sigma).max(q0);
                ErrorBar::new_vertical(p.photon_number, lo, p.q_int, p.q_int + p.q_int_sigma, color.filled(), 6)
            }))
            .map_err(err)?
            .label(s.mode_id.as_str())
            .legend(move |(x, y)| Circle::new((x, y), 3, color.filled()));
            let curve = (0..=200).map(|i| {
                let n = n0 * (n1 / n0).powf(i as f64 / 200.0);
                (n, 1.0 / s.tls.params.loss_at(n))
            });
            c.draw_series(LineSeries::new(curve.filter(|(_, q)| *q >= q0 && *q <= q1), color.stroke_width(2)))
                .map_err(err)?;
        }
        c.configure_series_labels()
            .position(SeriesLabelPosition::LowerRight)
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(err)?;
        Ok(())
    })
}

/// 1, 2, 5 times each power of ten inside `lo..=hi`.
fn one_two_five(lo: f64, hi: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for e in lo.log10().floor() as i32..=hi.log10().ceil() as i32 {
        for m in [1.0, 2.0, 5.0] {
            let v = m * 10f64.powi(e);
            if v >= lo && v <= hi {
                out.push(v);
            }
        }
    }
    out
}

pub fn budget(b: &LossBudget, title: &str) -> Result<String> {
    let channels: Vec<&String> = b
        .modes
        .iter()
        .flat_map(|m| m.channels.keys())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let n = b.modes.len() as u32;
    let labels: Vec<String> = b.modes.iter().map(|m| format!("{} (Q={:.2e})", m.mode_id, 1.0 / m.total_loss)).collect();
    const LEGEND_WIDTH: u32 = 150;
    let height = (120 + 60 * n.max(1)).max(70 + 24 * channels.len() as u32);
    render((900, height), |root| {
        let (chart, legend) = root.split_horizontally(900 - LEGEND_WIDTH);
        let mut c = ChartBuilder::on(&chart)
            .caption(title, (FONT, 20))
            .margin(14)
            .x_label_area_size(36)
            .y_label_area_size(170)
            .build_cartesian_2d(0f64..1.0, 0f64..n as f64)
            .map_err(err)?;
        c.configure_mesh()
            .disable_y_mesh()
            .y_labels(0)
            .x_desc("fraction of total loss")
            .draw()
            .map_err(err)?;
        for (ci, id) in channels.iter().enumerate() {
            let color = Palette99::pick(ci).to_rgba();
            let bars = b.modes.iter().enumerate().filter_map(|(j, m)| {
                let start: f64 = m.channels.iter().take_while(|(k, _)| k != id).map(|(_, s)| s.fraction.max(0.0)).sum();
                let share = m.channels.get(*id)?.fraction.max(0.0);
                let y = j as f64;
                Some(Rectangle::new([(start, y + 0.12), (start + share, y + 0.88)], color.filled()))
            });
            c.draw_series(bars).map_err(err)?;
            let y = 50 + 24 * ci as i32;
            legend
                .draw(&Rectangle::new([(8, y - 7), (22, y + 7)], color.filled()))
                .map_err(err)?;
            legend
                .draw(&Text::new(id.as_str(), (30, y), TextStyle::from((FONT, 14)).pos(Pos::new(HPos::Left, VPos::Center))))
                .map_err(err)?;
        }
        let right = TextStyle::from((FONT, 13)).pos(Pos::new(HPos::Right, VPos::Center));
        for (j, label) in labels.iter().enumerate() {
            let (px, py) = c.backend_coord(&(0.0, j as f64 + 0.5));
            root.draw(&Text::new(label.as_str(), (px - 8, py), right.clone())).map_err(err)?;
        }
        Ok(())
    })
}

/// Geometric cell edges around log-spaced grid values.
fn log_edges(v: &[f64]) -> Vec<f64> {
    let mut e = Vec::with_capacity(v.len() + 1);
    e.push(v[0] * (v[0] / v[1]).sqrt());
    e.extend(v.windows(2).map(|w| (w[0] * w[1]).sqrt()));
    let k = v.len() - 1;
    e.push(v[k] * (v[k] / v[k - 1]).sqrt());
    e
}

const LOG_ERR_RANGE: (f64, f64) = (-3.0, 0.0);

pub fn sensitivity(map: &SensitivityMap) -> Result<String> {
    let xe = log_edges(&map.x_values);
    let ye = log_edges(&map.y_values);
    let panels = [(&map.x.channel, &map.fractional_error_x), (&map.y.channel, &map.fractional_error_y)];
    render(WIDE, |root| {
        let (left, right) = root.split_horizontally(WIDE.0 / 2);
        for ((channel, frac), area) in panels.into_iter().zip([left, right]) {
            let mut c = ChartBuilder::on(&area)
                .caption(format!("sigma/Gamma of {channel} (grey: > 1)"), (FONT, 17))
                .margin(12)
                .x_label_area_size(40)
                .y_label_area_size(60)
                .build_cartesian_2d(
                    (xe[0]..xe[xe.len() - 1]).log_scale(),
                    (ye[0]..ye[ye.len() - 1]).log_scale(),
                )
                .map_err(err)?;
            c.configure_mesh()
                .disable_mesh()
                .x_desc(format!("Gamma {}", map.x.channel))
                .y_desc(format!("Gamma {}", map.y.channel))
                .x_label_formatter(&|v| format!("{v:.0e}"))
                .y_label_formatter(&|v| format!("{v:.0e}"))
                .draw()
                .map_err(err)?;
            let cells = frac.iter().enumerate().flat_map(|(iy, row)| {
                let (xe, ye) = (&xe, &ye);
                row.iter().enumerate().map(move |(ix, &r)| {
                    let color = if r.is_finite() && r < 1.0 {
                        let v = r.log10().clamp(LOG_ERR_RANGE.0, LOG_ERR_RANGE.1);
                        ViridisRGB::get_color_normalized(v, LOG_ERR_RANGE.0, LOG_ERR_RANGE.1).to_rgba()
                    } else {
                        RGBAColor(190, 190, 190, 1.0)
                    };
                    Rectangle::new([(xe[ix], ye[iy]), (xe[ix + 1], ye[iy + 1])], color.filled())
                })
            });
            c.draw_series(cells).map_err(err)?;
        }
        Ok(())
    })
}

pub fn sweep_plan(plan: &SweepPlan, q_loaded: f64) -> Result<String> {
    let offsets: Vec<(f64, f64)> = plan
        .points
        .iter()
        .enumerate()
        .map(|(i, f)| (i as f64, (f - plan.center) / plan.span))
        .collect();
    let phases: Vec<(f64, f64)> = plan
        .points
        .iter()
        .enumerate()
        .map(|(i, f)| (i as f64, 2.0 * (2.0 * q_loaded * (f / plan.center - 1.0)).atan()))
        .collect();
    let n = plan.points.len() as f64;
    render(WIDE, |root| {
        let (left, right) = root.split_horizontally(WIDE.0 / 2);
        let panels = [
            ("offset from center / span", -0.55..0.55, &offsets, "frequency plan"),
            ("resonator phase (rad)", -3.3..3.3, &phases, "phase coverage"),
        ];
        for ((ydesc, yr, pts, title), area) in panels.into_iter().zip([left, right]) {
            let mut c = ChartBuilder::on(&area)
                .caption(title, (FONT, 18))
                .margin(12)
                .x_label_area_size(36)
                .y_label_area_size(52)
                .build_cartesian_2d(-1.0..n, yr)
                .map_err(err)?;
            c.configure_mesh().x_desc("point index").y_desc(ydesc).draw().map_err(err)?;
            c.draw_series(pts.iter().map(|p| Circle::new(*p, 2, BLUE.filled()))).map_err(err)?;
        }
        Ok(())
    })
}
