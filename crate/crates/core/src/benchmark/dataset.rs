//! JSON-lines dataset files. Images are base64 of little-endian f32, H×W×3
//! row-major.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::fixtures::{SwapKind, SwapPair};
use super::render::{MicroScene, CHANNELS};
use super::tasks::{ItmExample, Task};
use super::BenchmarkError;
use crate::condition::Condition;

pub fn encode_image(image: &[f32]) -> String {
    let mut bytes = Vec::with_capacity(image.len() * 4);
    for v in image {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_image(s: &str, size: usize) -> Result<Vec<f32>, String> {
    let bytes = STANDARD.decode(s).map_err(|e| format!("bad base64 image: {e}"))?;
    let want = size * size * CHANNELS;
    if bytes.len() != want * 4 {
        return Err(format!("image holds {} bytes, expected {}", bytes.len(), want * 4));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct ExampleRecord {
    id: String,
    task: Task,
    suite_seed: u64,
    candidates: Vec<Condition>,
    correct_index: usize,
    render_seed: u64,
    image_size: usize,
    image: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct PairRecord {
    id: String,
    kind: SwapKind,
    condition_a: Condition,
    condition_b: Condition,
    render_seed_a: u64,
    render_seed_b: u64,
    image_size: usize,
    image_a: String,
    image_b: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct SceneRecord {
    condition: Condition,
    render_seed: u64,
    image_size: usize,
    image: String,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> BenchmarkError + '_ {
    move |source| BenchmarkError::Io { path: path.display().to_string(), source }
}

fn write_lines<T: Serialize>(path: &Path, records: impl Iterator<Item = T>) -> Result<(), BenchmarkError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for r in records {
        serde_json::to_writer(&mut w, &r).expect("records serialize");
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, BenchmarkError> {
    let r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| BenchmarkError::Format {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

fn format_err(path: &Path, line: usize, message: String) -> BenchmarkError {
    BenchmarkError::Format { path: path.display().to_string(), line, message }
}

fn scene(path: &Path, line: usize, condition: Condition, seed: u64, size: usize, image: &str)
    -> Result<MicroScene, BenchmarkError> {
    let image = decode_image(image, size).map_err(|m| format_err(path, line, m))?;
    Ok(MicroScene { condition, size, image, render_seed: seed })
}

pub fn write_examples(path: &Path, examples: &[ItmExample]) -> Result<(), BenchmarkError> {
    write_lines(
        path,
        examples.iter().map(|e| ExampleRecord {
            id: e.id.clone(),
            task: e.task,
            suite_seed: e.suite_seed,
            candidates: e.candidates.clone(),
            correct_index: e.correct_index,
            render_seed: e.image.render_seed,
            image_size: e.image.size,
            image: encode_image(&e.image.image),
        }),
    )
}

pub fn read_examples(path: &Path) -> Result<Vec<ItmExample>, BenchmarkError> {
    read_lines::<ExampleRecord>(path)?
        .into_iter()
        .map(|(line, r)| {
            let truth = r
                .candidates
                .get(r.correct_index)
                .cloned()
                .ok_or_else(|| format_err(path, line, format!("correctIndex {} out of range", r.correct_index)))?;
            Ok(ItmExample {
                image: scene(path, line, truth, r.render_seed, r.image_size, &r.image)?,
                id: r.id,
                task: r.task,
                suite_seed: r.suite_seed,
                candidates: r.candidates,
                correct_index: r.correct_index,
            })
        })
        .collect()
}

pub fn write_pairs(path: &Path, pairs: &[SwapPair]) -> Result<(), BenchmarkError> {
    write_lines(
        path,
        pairs.iter().map(|p| PairRecord {
            id: p.id.clone(),
            kind: p.kind,
            condition_a: p.a.condition.clone(),
            condition_b: p.b.condition.clone(),
            render_seed_a: p.a.render_seed,
            render_seed_b: p.b.render_seed,
            image_size: p.a.size,
            image_a: encode_image(&p.a.image),
            image_b: encode_image(&p.b.image),
        }),
    )
}

pub fn read_pairs(path: &Path) -> Result<Vec<SwapPair>, BenchmarkError> {
    read_lines::<PairRecord>(path)?
        .into_iter()
        .map(|(line, r)| {
            Ok(SwapPair {
                a: scene(path, line, r.condition_a, r.render_seed_a, r.image_size, &r.image_a)?,
                b: scene(path, line, r.condition_b, r.render_seed_b, r.image_size, &r.image_b)?,
                id: r.id,
                kind: r.kind,
            })
        })
        .collect()
}

pub fn write_scenes(path: &Path, scenes: &[MicroScene]) -> Result<(), BenchmarkError> {
    write_lines(
        path,
        scenes.iter().map(|s| SceneRecord {
            condition: s.condition.clone(),
            render_seed: s.render_seed,
            image_size: s.size,
            image: encode_image(&s.image),
        }),
    )
}

pub fn read_scenes(path: &Path) -> Result<Vec<MicroScene>, BenchmarkError> {
    read_lines::<SceneRecord>(path)?
        .into_iter()
        .map(|(line, r)| scene(path, line, r.condition, r.render_seed, r.image_size, &r.image))
        .collect()
}
