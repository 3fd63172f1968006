use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Deserialize;

use metaforge::discover::discover_subspace;
use metaforge::fit::{fit_full_offsets, fit_subspace_coefficients, FitResult, SourceShape};
use metaforge::handles::default_seed_vertex;
use metaforge::mesh::{cotangent_laplacian, EdgeGraph};
use metaforge::metrics::{eval_chamfer_dense, eval_cotlap_distortion, evaluate_sets};
use metaforge::{
    apply_subspace, clamp_coefficients, compute_biharmonic_coordinates, geodesic_fps, interpolate_coordinates,
    load_mesh, read_mesh, sample_coefficients, sample_surface, write_obj, ControlPointSet, DeformCoordinates,
    DeformationSubspace, Domain, TriMesh, Vec3,
};

use crate::bundle::{DeformationBundle, Encoding};
use crate::config::RunConfig;
use crate::error::{io_err, CliError, Result};
use crate::records::{
    rows, write_json, Breakdown, CoefficientRecord, DiscoverReport, EvalRecord, FitMetrics, FitRecord, SampleEntry,
    SampleRecord, Skipped,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FitMode {
    Full,
    Subspace,
}

fn load(path: &Path, config: &RunConfig) -> Result<TriMesh> {
    Ok(if config.normalize {
        load_mesh(path)?
    } else {
        read_mesh(path)?
    })
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// `path` with its extension replaced by `ext`.
fn sidecar(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

/// OBJ and OFF files directly inside `dir`, sorted by name.
fn mesh_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("obj" | "off")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn source_shape(bundle: &DeformationBundle, config: &RunConfig) -> Result<(SourceShape, DeformCoordinates)> {
    let mesh = bundle.mesh()?;
    let coords = bundle.coordinates(&mesh)?;
    let cloud = sample_surface(&mesh, config.p, config.seed)?;
    let with_points = interpolate_coordinates(&coords, &mesh, &cloud)?;
    Ok((SourceShape::new(mesh, cloud, with_points)?, coords))
}

fn metadata(config: &RunConfig, entries: &[(&str, String)]) -> BTreeMap<String, String> {
    let mut meta = BTreeMap::from([
        ("tool_version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("seed".to_string(), config.seed.to_string()),
        ("config".to_string(), config.to_toml()),
    ]);
    for (k, v) in entries {
        meta.insert(k.to_string(), v.clone());
    }
    meta
}

/// Externally computed coordinates for `precompute --coords-file`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoordsFile {
    control_indices: Vec<usize>,
    /// n rows of c weights.
    coordinates: Vec<Vec<f64>>,
}

fn external_coordinates(path: &Path, mesh: &TriMesh) -> Result<DeformCoordinates> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let file: CoordsFile = serde_json::from_str(&text).map_err(|e| CliError::Bundle {
        path: path.to_path_buf(),
        message: format!("coordinates file: {e}"),
    })?;
    let n = mesh.vertex_count();
    let c = file.control_indices.len();
    if file.coordinates.len() != n || file.coordinates.iter().any(|r| r.len() != c) {
        return Err(CliError::Precondition(format!(
            "{}: coordinates must be {n} rows of {c} weights",
            path.display()
        )));
    }
    let controls = ControlPointSet::new(mesh, file.control_indices)?;
    let w = DMatrix::from_fn(n, c, |i, j| file.coordinates[i][j]);
    Ok(DeformCoordinates::from_matrix(w, controls)?)
}

pub fn precompute(mesh_path: &Path, coords_file: Option<&Path>, out: &Path, text: bool, config: &RunConfig) -> Result<()> {
    let mesh = load(mesh_path, config)?;
    let (coords, kind) = match coords_file {
        Some(path) => (external_coordinates(path, &mesh)?, "external"),
        None => {
            let graph = EdgeGraph::from_mesh(&mesh);
            let controls = geodesic_fps(&mesh, &graph, config.c, default_seed_vertex(&mesh))?;
            let lap = cotangent_laplacian(&mesh)?;
            (compute_biharmonic_coordinates(&mesh, &lap, &controls)?, "biharmonic")
        }
    };
    let meta = metadata(
        config,
        &[("source", file_name(mesh_path)), ("coordinates", kind.to_string())],
    );
    let bundle = DeformationBundle::new(&mesh, &coords, None, meta);
    bundle.write(out, Encoding::text(text))?;
    eprintln!(
        "wrote {} ({} vertices, {} controls)",
        out.display(),
        bundle.vertex_count(),
        bundle.control_count()
    );
    Ok(())
}

fn fit_record(mode: FitMode, result: &FitResult, metrics: FitMetrics) -> FitRecord {
    FitRecord {
        mode: match mode {
            FitMode::Full => "full",
            FitMode::Subspace => "subspace",
        }
        .to_string(),
        converged: result.converged,
        trace: result.trace.clone(),
        breakdown: Breakdown::from(&result.breakdown),
        coefficients: result.coefficients.as_ref().map(|a| a.0.clone()),
        offsets: result.offsets.row_iter().map(|r| [r[0], r[1], r[2]]).collect(),
        degenerate_faces: result.degenerate_faces.clone(),
        metrics,
    }
}

pub fn fit(
    bundle_path: &Path,
    target_path: &Path,
    mode: FitMode,
    out: &Path,
    record: Option<&Path>,
    config: &RunConfig,
) -> Result<()> {
    let bundle = DeformationBundle::read(bundle_path)?;
    let (src, coords) = source_shape(&bundle, config)?;
    let subspace = match mode {
        FitMode::Subspace => {
            let sub = bundle.subspace(&coords)?;
            if sub.is_empty() {
                return Err(CliError::Precondition(format!(
                    "{} has no meta-handles; run discover first or use --mode full",
                    bundle_path.display()
                )));
            }
            Some(sub)
        }
        FitMode::Full => None,
    };
    let target_mesh = load(target_path, config)?;
    let target = sample_surface(&target_mesh, config.p, config.seed.wrapping_add(1))?;
    let fit_config = config.fit();
    let result = match &subspace {
        Some(sub) => fit_subspace_coefficients(&src, &target.points, sub, &fit_config)?,
        None => fit_full_offsets(&src, &target.points, &fit_config)?,
    };
    let deformed = src.mesh().with_vertices(result.deformed_vertices.clone())?;
    write_obj(&deformed, out)?;
    let metrics = FitMetrics {
        chamfer_dense: eval_chamfer_dense(&deformed, &target_mesh, config.dense_samples, config.seed)?,
        dense_samples: config.dense_samples,
        cotlap_distortion: eval_cotlap_distortion(src.mesh(), &result.deformed_vertices)?,
    };
    let record_path = record.map(Path::to_path_buf).unwrap_or_else(|| sidecar(out, "json"));
    write_json(&fit_record(mode, &result, metrics.clone()), &record_path)?;
    eprintln!(
        "fit: objective {:.6e} after {} refreshes, dense chamfer {:.6e}",
        result.breakdown.total,
        result.trace.len(),
        metrics.chamfer_dense
    );
    Ok(())
}

pub fn discover(
    bundle_path: &Path,
    targets_dir: &Path,
    out: &Path,
    report: Option<&Path>,
    text: bool,
    config: &RunConfig,
) -> Result<()> {
    let bundle = DeformationBundle::read(bundle_path)?;
    let (src, coords) = source_shape(&bundle, config)?;
    let files = mesh_files(targets_dir)?;
    if files.len() < config.m {
        return Err(metaforge::Error::InsufficientTargets {
            available: files.len(),
            required: config.m,
        }
        .into());
    }
    let targets: Vec<Vec<Vec3>> = files
        .par_iter()
        .enumerate()
        .map(|(k, path)| {
            let mesh = load(path, config)?;
            let seed = config.seed.wrapping_add(1).wrapping_add(k as u64);
            Ok(sample_surface(&mesh, config.p, seed)?.points)
        })
        .collect::<Result<_>>()?;
    let (subspace, rep) = discover_subspace(&src, &targets, &config.discovery())?;

    let names: Vec<String> = files.iter().map(|p| file_name(p)).collect();
    let mut meta = bundle.metadata.clone();
    meta.extend(metadata(
        config,
        &[("targets", file_name(targets_dir)), ("target_count", files.len().to_string())],
    ));
    let updated = DeformationBundle::new(src.mesh(), &coords, Some(&subspace), meta);
    updated.write(out, Encoding::text(text))?;

    let pair = |r: &[(f64, f64)]| r.iter().map(|&(lo, hi)| [lo, hi]).collect::<Vec<_>>();
    let record = DiscoverReport {
        kept: rep.kept.iter().map(|&k| names[k].clone()).collect(),
        dropped: rep.dropped.iter().map(|&k| names[k].clone()).collect(),
        targets: names,
        fit_losses: rep.fit_losses.iter().map(Breakdown::from).collect(),
        trace: rep.trace.clone(),
        reconstruction: rep.terms.reconstruction,
        sparsity: rep.terms.sparsity,
        covariance: rep.terms.covariance,
        orthogonality: rep.terms.orthogonality,
        svd: rep.terms.svd,
        random_rows: rep.random_rows.clone(),
        initial_ranges: pair(&rep.ranges.initial),
        ranges: pair(subspace.ranges()),
        tau_geo: rep.ranges.tau_geo,
        mean_losses: rep.ranges.mean_losses.clone(),
        shrink_rounds: rep.ranges.shrink_rounds,
        coefficients: rows(&rep.coefficients),
    };
    let report_path = report.map(Path::to_path_buf).unwrap_or_else(|| sidecar(out, "report.json"));
    write_json(&record, &report_path)?;
    eprintln!(
        "discover: {} handles from {} of {} targets, {} dropped",
        subspace.len(),
        record.kept.len(),
        record.targets.len(),
        record.dropped.len()
    );
    Ok(())
}

fn stored_subspace(bundle: &DeformationBundle, path: &Path) -> Result<(TriMesh, DeformationSubspace)> {
    let mesh = bundle.mesh()?;
    let coords = bundle.coordinates(&mesh)?;
    let sub = bundle.subspace(&coords)?;
    if sub.is_empty() {
        return Err(CliError::Precondition(format!(
            "{} has no meta-handles; run discover first",
            path.display()
        )));
    }
    Ok((mesh, sub))
}

fn deform_mesh(mesh: &TriMesh, sub: &DeformationSubspace, a: &[f64]) -> Result<TriMesh> {
    let vertices = apply_subspace(sub, a, mesh.vertices(), Domain::Vertices)?;
    Ok(mesh.with_vertices(vertices)?)
}

pub fn sample(bundle_path: &Path, count: usize, out_dir: &Path, coeffs: Option<&Path>, config: &RunConfig) -> Result<()> {
    let bundle = DeformationBundle::read(bundle_path)?;
    let (mesh, sub) = stored_subspace(&bundle, bundle_path)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    if let Some(path) = coeffs {
        let record = CoefficientRecord::read(path)?;
        if record.coefficients.len() != sub.len() {
            return Err(CliError::Precondition(format!(
                "{}: {} coefficients for {} meta-handles",
                path.display(),
                record.coefficients.len(),
                sub.len()
            )));
        }
        let a = clamp_coefficients(&sub, &record.coefficients)?;
        let out = out_dir.join("replay.obj");
        write_obj(&deform_mesh(&mesh, &sub, &a)?, &out)?;
        eprintln!("wrote {}", out.display());
        return Ok(());
    }

    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let seed = config.seed.wrapping_add(i as u64);
        let a = sample_coefficients(&sub, seed);
        let file = format!("sample_{i:03}.obj");
        write_obj(&deform_mesh(&mesh, &sub, &a)?, out_dir.join(&file))?;
        samples.push(SampleEntry {
            file,
            seed,
            coefficients: a.0,
        });
    }
    write_json(&SampleRecord { samples }, &out_dir.join("coefficients.json"))?;
    eprintln!("wrote {count} samples to {}", out_dir.display());
    Ok(())
}

/// Loads and samples every mesh in `dir`; unreadable ones are returned
/// separately.
fn sample_dir(dir: &Path, config: &RunConfig) -> Result<(Vec<String>, Vec<Vec<Vec3>>, Vec<Skipped>)> {
    let files = mesh_files(dir)?;
    if files.is_empty() {
        return Err(CliError::Precondition(format!("{} contains no OBJ or OFF meshes", dir.display())));
    }
    let loaded: Vec<std::result::Result<Vec<Vec3>, String>> = files
        .par_iter()
        .map(|path| {
            load(path, config)
                .and_then(|m| Ok(sample_surface(&m, config.p, config.seed)?.points))
                .map_err(|e| e.to_string())
        })
        .collect();
    let (mut names, mut clouds, mut skipped) = (Vec::new(), Vec::new(), Vec::new());
    for (path, result) in files.iter().zip(loaded) {
        match result {
            Ok(points) => {
                names.push(file_name(path));
                clouds.push(points);
            }
            Err(error) => {
                eprintln!("skipping {}: {error}", path.display());
                skipped.push(Skipped {
                    path: path.display().to_string(),
                    error,
                });
            }
        }
    }
    Ok((names, clouds, skipped))
}

pub fn eval(generated_dir: &Path, reference_dir: &Path, out: Option<&Path>, config: &RunConfig) -> Result<EvalRecord> {
    let (gen_names, generated, mut skipped) = sample_dir(generated_dir, config)?;
    let (ref_names, reference, ref_skipped) = sample_dir(reference_dir, config)?;
    skipped.extend(ref_skipped);
    for (names, dir) in [(&gen_names, generated_dir), (&ref_names, reference_dir)] {
        if names.is_empty() {
            return Err(CliError::Io {
                path: dir.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, "no readable meshes"),
            });
        }
    }
    let report = evaluate_sets(&generated, &reference)?;
    let record = EvalRecord {
        coverage: report.coverage,
        mmd: report.mmd,
        generated: gen_names,
        reference: ref_names,
        table: rows(&report.table),
        skipped,
    };
    print!("{}", eval_table(&record));
    if let Some(path) = out {
        write_json(&record, path)?;
    }
    Ok(record)
}

/// Summary lines followed by the Chamfer table, one row per generated
/// shape.
pub fn eval_table(record: &EvalRecord) -> String {
    let mut s = format!(
        "COV {:.6}\nMMD {:.6e}\ngenerated {} reference {} skipped {}\n",
        record.coverage,
        record.mmd,
        record.generated.len(),
        record.reference.len(),
        record.skipped.len()
    );
    let width = record.generated.iter().map(String::len).max().unwrap_or(0).max(9);
    s.push_str(&format!("{:width$}", "generated"));
    for name in &record.reference {
        s.push_str(&format!(" {name:>12}"));
    }
    s.push('\n');
    for (name, row) in record.generated.iter().zip(&record.table) {
        s.push_str(&format!("{name:width$}"));
        for v in row {
            s.push_str(&format!(" {v:>12.6e}"));
        }
        s.push('\n');
    }
    s
}

pub fn export(bundle_path: &Path, out: &Path, text: bool) -> Result<()> {
    let bundle = DeformationBundle::read(bundle_path)?;
    bundle.write(out, Encoding::text(text))
}
