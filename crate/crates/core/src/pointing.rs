//! Pointing-game localization: does the saliency of a class land inside
//! that class's bounding boxes?

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pixel box, `x` along columns, `y` along rows, `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::Parameter(format!(
                "empty box ({x0}, {y0}, {x1}, {y1})"
            )));
        }
        Ok(BoundingBox { x0, y0, x1, y1 })
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }
}

/// One saliency map (nonnegative `H x W`) and the target-class boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct PointingCase {
    pub image_id: String,
    height: usize,
    width: usize,
    map: Vec<f32>,
    boxes: Vec<BoundingBox>,
}

impl PointingCase {
    pub fn new(image_id: impl Into<String>, map: &Tensor, boxes: Vec<BoundingBox>) -> Result<Self> {
        let [height, width] = *map.shape() else {
            return Err(Error::Input(format!("map must be H x W, got {:?}", map.shape())));
        };
        let values = map.as_f32()?;
        if values.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::Input("map values must be finite and nonnegative".into()));
        }
        if boxes.is_empty() {
            return Err(Error::Parameter("case has no boxes".into()));
        }
        if let Some(b) = boxes.iter().find(|b| b.x1 > width || b.y1 > height) {
            return Err(Error::Parameter(format!(
                "box {b:?} exceeds the {height}x{width} image"
            )));
        }
        Ok(PointingCase {
            image_id: image_id.into(),
            height,
            width,
            map: values.to_vec(),
            boxes,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn map(&self) -> &[f32] {
        &self.map
    }

    pub fn boxes(&self) -> &[BoundingBox] {
        &self.boxes
    }

    /// Whether flat pixel index `i` lies in any box.
    pub fn in_boxes(&self, i: usize) -> bool {
        let (y, x) = (i / self.width, i % self.width);
        self.boxes.iter().any(|b| b.contains(x, y))
    }
}

/// Flat indices of the smallest prefix of pixels, sorted by value
/// descending (ties row-major), holding at least `m` percent of the total.
pub fn energy_threshold(map: &[f32], m: f64) -> Result<Vec<usize>> {
    if !(m > 0.0 && m <= 100.0) {
        return Err(Error::Parameter(format!("m must be in (0, 100], got {m}")));
    }
    let mut order: Vec<usize> = (0..map.len()).collect();
    // stable sort keeps row-major order among ties
    order.sort_by(|&a, &b| map[b].total_cmp(&map[a]));
    let total: f64 = order.iter().map(|&i| f64::from(map[i])).sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::Degenerate("saliency map has no energy".into()));
    }
    let mut cum = 0.0f64;
    for (k, &i) in order.iter().enumerate() {
        cum += f64::from(map[i]);
        if cum * 100.0 >= m * total {
            order.truncate(k + 1);
            return Ok(order);
        }
    }
    Ok(order)
}

fn argmax(map: &[f32]) -> usize {
    map.iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > map[best] { i } else { best })
}

pub trait PointingEvaluator: Send + Sync {
    fn name(&self) -> &'static str;

    /// Whether the outcome depends on the kept-energy percentage.
    fn uses_energy(&self) -> bool {
        false
    }

    fn hit(&self, case: &PointingCase, m: f64) -> Result<bool>;
}

/// Hit when the single most salient pixel is inside a box.
pub struct OriginalPointing;

impl PointingEvaluator for OriginalPointing {
    fn name(&self) -> &'static str {
        "original"
    }

    fn hit(&self, case: &PointingCase, _m: f64) -> Result<bool> {
        Ok(case.in_boxes(argmax(&case.map)))
    }
}

/// Hit when at least `containment` of the pixels kept by
/// [`energy_threshold`] lie inside the boxes.
pub struct GeneralizedPointing {
    pub containment: f64,
}

impl Default for GeneralizedPointing {
    fn default() -> Self {
        GeneralizedPointing { containment: 1.0 }
    }
}

impl PointingEvaluator for GeneralizedPointing {
    fn name(&self) -> &'static str {
        "generalized"
    }

    fn uses_energy(&self) -> bool {
        true
    }

    fn hit(&self, case: &PointingCase, m: f64) -> Result<bool> {
        if !(self.containment > 0.0 && self.containment <= 1.0) {
            return Err(Error::Parameter(format!(
                "containment must be in (0, 1], got {}",
                self.containment
            )));
        }
        let kept = energy_threshold(&case.map, m)?;
        let inside = kept.iter().filter(|&&i| case.in_boxes(i)).count();
        Ok(inside as f64 >= self.containment * kept.len() as f64)
    }
}

/// Ignores the map and points at the image center.
pub struct CenterBaseline;

impl PointingEvaluator for CenterBaseline {
    fn name(&self) -> &'static str {
        "center"
    }

    fn hit(&self, case: &PointingCase, _m: f64) -> Result<bool> {
        Ok(case.in_boxes((case.height / 2) * case.width + case.width / 2))
    }
}

pub struct PointingRegistry {
    evaluators: BTreeMap<String, Box<dyn PointingEvaluator>>,
}

impl PointingRegistry {
    pub fn empty() -> Self {
        PointingRegistry {
            evaluators: BTreeMap::new(),
        }
    }

    pub fn with_builtin(containment: f64) -> Self {
        let mut r = PointingRegistry::empty();
        r.register(Box::new(OriginalPointing));
        r.register(Box::new(GeneralizedPointing { containment }));
        r.register(Box::new(CenterBaseline));
        r
    }

    pub fn register(&mut self, evaluator: Box<dyn PointingEvaluator>) {
        self.evaluators.insert(evaluator.name().to_string(), evaluator);
    }

    pub fn get(&self, name: &str) -> Result<&dyn PointingEvaluator> {
        self.evaluators.get(name).map(|e| e.as_ref()).ok_or_else(|| {
            Error::Parameter(format!(
                "unknown pointing evaluator '{name}' (known: {})",
                self.names().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.evaluators.keys().map(String::as_str)
    }
}

/// `hits / (hits + misses)` over `cases` at kept-energy `m`.
pub fn localization_accuracy(cases: &[PointingCase], evaluator: &dyn PointingEvaluator, m: f64) -> Result<f64> {
    if cases.is_empty() {
        return Err(Error::Parameter("no pointing cases".into()));
    }
    let mut hits = 0usize;
    for case in cases {
        hits += usize::from(evaluator.hit(case, m)?);
    }
    Ok(hits as f64 / cases.len() as f64)
}

/// Kept-energy percentages of an accuracy curve: 5, 10, ..., 100.
pub fn curve_points() -> Vec<u32> {
    (1..=20).map(|i| i * 5).collect()
}

/// `(m, accuracy)` at every point of [`curve_points`].
pub fn accuracy_curve(cases: &[PointingCase], evaluator: &dyn PointingEvaluator) -> Result<Vec<(u32, f64)>> {
    curve_points()
        .into_iter()
        .map(|m| Ok((m, localization_accuracy(cases, evaluator, f64::from(m))?)))
        .collect()
}

/// Accuracy curves of several saliency methods, in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CurveSet {
    pub curves: Vec<(String, Vec<(u32, f64)>)>,
}

impl CurveSet {
    pub fn push(&mut self, method: impl Into<String>, curve: Vec<(u32, f64)>) {
        self.curves.push((method.into(), curve));
    }

    /// `(a, b, m, acc_a - acc_b)` for every ordered pair `a` before `b`.
    pub fn pairwise_differences(&self) -> Vec<(String, String, u32, f64)> {
        let mut out = Vec::new();
        for (i, (a, ca)) in self.curves.iter().enumerate() {
            for (b, cb) in &self.curves[i + 1..] {
                for (&(m, x), &(_, y)) in ca.iter().zip(cb) {
                    out.push((a.clone(), b.clone(), m, x - y));
                }
            }
        }
        out
    }

    /// CSV with header `method,m,acc`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv(e.to_string()))?;
        let mut rows = vec![["method".to_string(), "m".to_string(), "acc".to_string()]];
        for (method, curve) in &self.curves {
            for (m, acc) in curve {
                rows.push([method.clone(), m.to_string(), acc.to_string()]);
            }
        }
        for r in rows {
            w.write_record(&r).map_err(|e| Error::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// CSV with header `method_a,method_b,m,diff`.
    pub fn write_differences_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv(e.to_string()))?;
        w.write_record(["method_a", "method_b", "m", "diff"])
            .map_err(|e| Error::Csv(e.to_string()))?;
        for (a, b, m, d) in self.pairwise_differences() {
            w.write_record([a, b, m.to_string(), d.to_string()])
                .map_err(|e| Error::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// One row of a boxes CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoxRecord {
    pub image_id: String,
    pub class: String,
    pub bbox: BoundingBox,
}

/// Reads a CSV with header `image_id,class,x0,y0,x1,y1`.
pub fn read_boxes(path: impl AsRef<Path>) -> Result<Vec<BoxRecord>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv(e.to_string()))?;
    let headers = reader.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();
    let expected = ["image_id", "class", "x0", "y0", "x1", "y1"];
    if headers.iter().map(str::trim).ne(expected) {
        return Err(Error::Csv(format!(
            "{}: header must be {}",
            path.display(),
            expected.join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        let coord = |k: usize| -> Result<usize> {
            record[k].trim().parse().map_err(|_| {
                Error::Csv(format!("row {}: bad {} '{}'", line + 1, expected[k], &record[k]))
            })
        };
        out.push(BoxRecord {
            image_id: record[0].trim().to_string(),
            class: record[1].trim().to_string(),
            bbox: BoundingBox::new(coord(2)?, coord(3)?, coord(4)?, coord(5)?)?,
        });
    }
    Ok(out)
}

/// Boxes of `(image_id, class)` pairs, in file order.
pub fn group_boxes(records: &[BoxRecord]) -> BTreeMap<(String, String), Vec<BoundingBox>> {
    let mut out: BTreeMap<(String, String), Vec<BoundingBox>> = BTreeMap::new();
    for r in records {
        out.entry((r.image_id.clone(), r.class.clone()))
            .or_default()
            .push(r.bbox);
    }
    out
}
