//! The `.anof` tensor container and the feature/mask/map types built on it.
//!
//! Layout (all little-endian, no padding):
//!
//! ```text
//! magic    4 bytes  "ANOF"
//! version  u32      1
//! dtype    u8       0 = f32, 1 = u8
//! ndim     u8
//! dims     u64 x ndim
//! payload  product(dims) scalars, row-major
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"ANOF";
pub const VERSION: u32 = 1;
pub const EXTENSION: &str = "anof";

const FIXED_HEADER: usize = 4 + 4 + 1 + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    U8 = 1,
}

impl DType {
    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::U8),
            other => Err(Error::UnknownDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A dense row-major tensor as stored in an `.anof` file.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "dims {:?} hold {} scalars, data has {}",
                dims,
                expected,
                data.len()
            )));
        }
        if dims.len() > u8::MAX as usize {
            return Err(Error::ShapeMismatch(format!("{} dims exceed 255", dims.len())));
        }
        Ok(Tensor { dims, data })
    }

    pub fn from_f32(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(dims, TensorData::F32(data))
    }

    pub fn from_u8(dims: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        Self::new(dims, TensorData::U8(data))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_parts(self) -> (Vec<usize>, TensorData) {
        (self.dims, self.data)
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            TensorData::U8(_) => None,
        }
    }

    pub fn as_u8(&self) -> Option<&[u8]> {
        match &self.data {
            TensorData::U8(v) => Some(v),
            TensorData::F32(_) => None,
        }
    }
}

fn check_finite(values: &[f32]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFiniteScalar { index }),
        None => Ok(()),
    }
}

/// Serialize a tensor to its `.anof` byte representation.
pub fn encode(tensor: &Tensor) -> Result<Vec<u8>> {
    if let TensorData::F32(v) = &tensor.data {
        check_finite(v)?;
    }
    let dtype = tensor.data.dtype();
    let mut out =
        Vec::with_capacity(FIXED_HEADER + 8 * tensor.dims.len() + tensor.data.len() * dtype.size());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype as u8);
    out.push(tensor.dims.len() as u8);
    for &d in &tensor.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match &tensor.data {
        TensorData::F32(v) => {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        TensorData::U8(v) => out.extend_from_slice(v),
    }
    Ok(out)
}

/// Parse an `.anof` byte buffer.
pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let truncated = |expected: usize| Error::TruncatedPayload {
        expected,
        found: bytes.len(),
    };
    if bytes.len() < 4 {
        return Err(truncated(FIXED_HEADER));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    if bytes.len() < FIXED_HEADER {
        return Err(truncated(FIXED_HEADER));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let dtype = DType::from_code(bytes[8])?;
    let ndim = bytes[9] as usize;
    let header_len = FIXED_HEADER + 8 * ndim;
    if bytes.len() < header_len {
        return Err(truncated(header_len));
    }
    let mut dims = Vec::with_capacity(ndim);
    for k in 0..ndim {
        let at = FIXED_HEADER + 8 * k;
        let d = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let d = usize::try_from(d)
            .map_err(|_| Error::ShapeMismatch(format!("dimension {d} does not fit in memory")))?;
        dims.push(d);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::ShapeMismatch(format!("dims {dims:?} overflow")))?;
    let payload_len = count
        .checked_mul(dtype.size())
        .ok_or_else(|| Error::ShapeMismatch(format!("dims {dims:?} overflow")))?;
    let payload = &bytes[header_len..];
    if payload.len() < payload_len {
        return Err(Error::TruncatedPayload {
            expected: header_len + payload_len,
            found: bytes.len(),
        });
    }
    if payload.len() > payload_len {
        return Err(Error::TrailingBytes {
            extra: payload.len() - payload_len,
        });
    }
    let data = match dtype {
        DType::F32 => {
            let values: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            check_finite(&values)?;
            TensorData::F32(values)
        }
        DType::U8 => TensorData::U8(payload.to_vec()),
    };
    Ok(Tensor { dims, data })
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(tensor)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Write through a sibling temporary file and rename into place.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::Error::other("path has no file name")))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(file);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_tensor_atomic(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    write_atomic(path, &encode(tensor)?)
}

/// Sorted `.anof` files directly inside `dir`.
pub fn list_tensor_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() && path.extension().is_some_and(|e| e == EXTENSION) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Patch features of one query image on an `height x width` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub image_id: String,
    height: usize,
    width: usize,
    data: Array2<f32>,
}

impl FeatureGrid {
    /// `data` holds one row per patch, row-major over the grid.
    pub fn new(image_id: impl Into<String>, height: usize, width: usize, data: Array2<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::ShapeMismatch("grid must have at least one patch".into()));
        }
        if data.nrows() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} grid needs {} rows, found {}",
                height,
                width,
                height * width,
                data.nrows()
            )));
        }
        if data.ncols() == 0 {
            return Err(Error::ShapeMismatch("feature dimension must be at least 1".into()));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteScalar { index });
        }
        Ok(FeatureGrid {
            image_id: image_id.into(),
            height,
            width,
            data: data.as_standard_layout().into_owned(),
        })
    }

    /// Accepts `[H, W, d]` tensors, or `[N, d]` tensors as an `N x 1` grid.
    pub fn from_tensor(image_id: impl Into<String>, tensor: Tensor) -> Result<Self> {
        let (dims, data) = tensor.into_parts();
        let TensorData::F32(values) = data else {
            return Err(Error::ShapeMismatch("feature tensors must be f32".into()));
        };
        let (h, w, d) = match dims.as_slice() {
            [h, w, d] => (*h, *w, *d),
            [n, d] => (*n, 1, *d),
            other => {
                return Err(Error::ShapeMismatch(format!(
                    "feature tensor must be [H, W, d] or [N, d], found {other:?}"
                )))
            }
        };
        let data = Array2::from_shape_vec((h * w, d), values)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Self::new(image_id, h, w, data)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: vec![self.height, self.width, self.dim()],
            data: TensorData::F32(self.data.iter().copied().collect()),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_tensor(file_stem(path), read_tensor(path)?)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f32> {
        self.data.view()
    }
}

/// Stacked normal reference patches, possibly from several images.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePool {
    data: Array2<f32>,
    sources: Vec<String>,
    row_source: Vec<u32>,
}

impl ReferencePool {
    pub fn new(data: Array2<f32>, source_id: impl Into<String>) -> Result<Self> {
        let n = data.nrows();
        Self::with_sources(data, vec![source_id.into()], vec![0; n])
    }

    pub fn with_sources(data: Array2<f32>, sources: Vec<String>, row_source: Vec<u32>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::EmptyPool);
        }
        if data.ncols() == 0 {
            return Err(Error::ShapeMismatch("feature dimension must be at least 1".into()));
        }
        if row_source.len() != data.nrows() || row_source.iter().any(|&s| s as usize >= sources.len()) {
            return Err(Error::ShapeMismatch("row provenance does not match pool".into()));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteScalar { index });
        }
        Ok(ReferencePool {
            data: data.as_standard_layout().into_owned(),
            sources,
            row_source,
        })
    }

    /// Stack the patches of several grids, preserving order.
    pub fn from_grids(grids: &[FeatureGrid]) -> Result<Self> {
        let first = grids.first().ok_or(Error::EmptyPool)?;
        let dim = first.dim();
        let total: usize = grids.iter().map(FeatureGrid::len).sum();
        let mut values = Vec::with_capacity(total * dim);
        let mut row_source = Vec::with_capacity(total);
        for (k, g) in grids.iter().enumerate() {
            if g.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: g.dim(),
                });
            }
            values.extend(g.features().iter().copied());
            row_source.extend(std::iter::repeat_n(k as u32, g.len()));
        }
        let data = Array2::from_shape_vec((total, dim), values)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let sources = grids.iter().map(|g| g.image_id.clone()).collect();
        Self::with_sources(data, sources, row_source)
    }

    /// Load every `.anof` file in `dir` (sorted by name) into one pool.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let files = list_tensor_files(dir)?;
        if files.is_empty() {
            return Err(Error::EmptyPool);
        }
        let grids = files
            .iter()
            .map(FeatureGrid::load)
            .collect::<Result<Vec<_>>>()?;
        Self::from_grids(&grids)
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f32> {
        self.data.view()
    }

    /// Provenance of pool row `row`.
    pub fn source_of(&self, row: usize) -> &str {
        &self.sources[self.row_source[row] as usize]
    }

    /// Number of distinct source images.
    pub fn source_count(&self) -> usize {
        self.sources.len()
    }
}

/// Binary ground-truth mask, stored as a u8 tensor with values {0, 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask(pub Array2<u8>);

impl Mask {
    pub fn from_tensor(tensor: Tensor) -> Result<Self> {
        let (dims, data) = tensor.into_parts();
        let TensorData::U8(values) = data else {
            return Err(Error::ShapeMismatch("masks must be u8".into()));
        };
        let [h, w] = dims[..] else {
            return Err(Error::ShapeMismatch(format!("mask must be [H, W], found {dims:?}")));
        };
        if let Some(&bad) = values.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidMaskValue(bad));
        }
        Array2::from_shape_vec((h, w), values)
            .map(Mask)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))
    }

    pub fn to_tensor(&self) -> Tensor {
        let (h, w) = self.0.dim();
        Tensor {
            dims: vec![h, w],
            data: TensorData::U8(self.0.iter().copied().collect()),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tensor(read_tensor(path)?)
    }
}

/// Anomaly maps are stored as `[H, W]` f32 tensors.
pub fn map_to_tensor(map: &Array2<f32>) -> Tensor {
    let (h, w) = map.dim();
    Tensor {
        dims: vec![h, w],
        data: TensorData::F32(map.iter().copied().collect()),
    }
}

pub fn map_from_tensor(tensor: Tensor) -> Result<Array2<f32>> {
    let (dims, data) = tensor.into_parts();
    let TensorData::F32(values) = data else {
        return Err(Error::ShapeMismatch("anomaly maps must be f32".into()));
    };
    let [h, w] = dims[..] else {
        return Err(Error::ShapeMismatch(format!("map must be [H, W], found {dims:?}")));
    };
    Array2::from_shape_vec((h, w), values).map_err(|e| Error::ShapeMismatch(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(dtype: u8, dims: &[u64]) -> Vec<u8> {
        let mut b = b"ANOF".to_vec();
        b.extend_from_slice(&1u32.to_le_bytes());
        b.push(dtype);
        b.push(dims.len() as u8);
        for d in dims {
            b.extend_from_slice(&d.to_le_bytes());
        }
        b
    }

    #[test]
    fn decodes_handcrafted_2x3() {
        let mut bytes = header(0, &[2, 3]);
        for v in [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let t = decode(&bytes).unwrap();
        assert_eq!(t.dims(), &[2, 3]);
        assert_eq!(t.as_f32().unwrap(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn endianness_is_fixed() {
        // 1.0f32 = 0x3F800000, 2.0f32 = 0x40000000, little-endian.
        let mut bytes = header(0, &[2]);
        bytes.extend_from_slice(&[0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x00, 0x40]);
        let t = decode(&bytes).unwrap();
        assert_eq!(t.as_f32().unwrap(), &[1.0, 2.0]);
        assert_eq!(encode(&t).unwrap(), bytes);
    }

    #[test]
    fn short_payload_is_truncated() {
        let mut bytes = header(0, &[2, 3]);
        bytes.extend_from_slice(&[0u8; 23]);
        assert!(matches!(decode(&bytes), Err(Error::TruncatedPayload { .. })));
    }

    #[test]
    fn long_payload_is_rejected() {
        let mut bytes = header(1, &[2]);
        bytes.extend_from_slice(&[0, 1, 0]);
        assert!(matches!(decode(&bytes), Err(Error::TrailingBytes { extra: 1 })));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = header(0, &[1]);
        bytes.extend_from_slice(&0f32.to_le_bytes());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(decode(&wrong), Err(Error::BadMagic { .. })));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(decode(&v2), Err(Error::VersionUnsupported(2))));
        let mut dt = bytes;
        dt[8] = 7;
        assert!(matches!(decode(&dt), Err(Error::UnknownDtype(7))));
    }

    #[test]
    fn nan_rejected_on_both_sides() {
        let t = Tensor::from_f32(vec![2], vec![1.0, f32::NAN]).unwrap();
        assert!(matches!(encode(&t), Err(Error::NonFiniteScalar { index: 1 })));
        let mut bytes = header(0, &[1]);
        bytes.extend_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::NonFiniteScalar { index: 0 })));
    }

    #[test]
    fn file_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.anof");
        write_tensor(&p, &Tensor::from_f32(vec![1, 1], vec![0.0]).unwrap()).unwrap();
        let original = fs::read(&p).unwrap();
        let t = read_tensor(&p).unwrap();
        assert_eq!(t.as_f32().unwrap(), &[0.0]);
        let q = dir.path().join("u.anof");
        write_tensor_atomic(&q, &t).unwrap();
        assert_eq!(fs::read(&q).unwrap(), original);
    }

    #[test]
    fn large_grid_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let values: Vec<f32> = (0..768 * 1024).map(|_| rng.random_range(-10.0..10.0)).collect();
        let t = Tensor::from_f32(vec![768, 1024], values).unwrap();
        let bytes = encode(&t).unwrap();
        let back = decode(&bytes).unwrap();
        assert_eq!(back, t);
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn grid_and_pool_from_tensors() {
        let t = Tensor::from_f32(vec![2, 2, 3], (0..12).map(|v| v as f32).collect()).unwrap();
        let g = FeatureGrid::from_tensor("img", t.clone()).unwrap();
        assert_eq!((g.height(), g.width(), g.dim(), g.len()), (2, 2, 3, 4));
        assert_eq!(g.features()[[3, 2]], 11.0);
        assert_eq!(g.to_tensor(), t);
        let h = FeatureGrid::new("other", 1, 1, Array2::ones((1, 3))).unwrap();
        let pool = ReferencePool::from_grids(&[g, h]).unwrap();
        assert_eq!(pool.len(), 5);
        assert_eq!(pool.source_of(0), "img");
        assert_eq!(pool.source_of(4), "other");
        let bad = FeatureGrid::new("bad", 1, 1, Array2::ones((1, 2))).unwrap();
        assert!(matches!(
            ReferencePool::from_grids(&[bad, FeatureGrid::new("x", 1, 1, Array2::ones((1, 3))).unwrap()]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(ReferencePool::from_grids(&[]), Err(Error::EmptyPool)));
    }

    #[test]
    fn masks_reject_non_binary() {
        let t = Tensor::from_u8(vec![1, 2], vec![0, 2]).unwrap();
        assert!(matches!(Mask::from_tensor(t), Err(Error::InvalidMaskValue(2))));
        let ok = Tensor::from_u8(vec![1, 2], vec![0, 1]).unwrap();
        assert_eq!(Mask::from_tensor(ok.clone()).unwrap().to_tensor(), ok);
    }

    fn finite_tensor() -> impl Strategy<Value = Tensor> {
        prop::collection::vec(1usize..5, 1..4).prop_flat_map(|dims| {
            let n: usize = dims.iter().product();
            prop::collection::vec(
                prop::num::f32::NORMAL | prop::num::f32::ZERO | prop::num::f32::SUBNORMAL,
                n,
            )
            .prop_map(move |v| Tensor::from_f32(dims.clone(), v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(t in finite_tensor()) {
            let bytes = encode(&t).unwrap();
            let back = decode(&bytes).unwrap();
            let a: Vec<u32> = t.as_f32().unwrap().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.as_f32().unwrap().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(back.dims(), t.dims());
        }
    }
}
