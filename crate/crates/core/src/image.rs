//! Raster types: whole images, square patches, and bursts.
//!
//! Pixel values are `f64` in the nominal range `[0,1]`; 8-bit I/O scales by
//! 1/255. Image data is row-major, interleaved by channel:
//! `data[(y * width + x) * channels + c]`.

use crate::error::{invalid, Error, Result};

/// H×W×C raster, the unit of I/O and restoration.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(invalid(format!("channels must be 1 or 3, got {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(invalid(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::new(height, width, channels, vec![0.0; height * width * channels])
            .expect("valid zero image")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Extract one channel as a flat H×W plane.
    pub fn plane(&self, c: usize) -> Vec<f64> {
        assert!(c < self.channels, "channel out of range");
        self.data
            .chunks_exact(self.channels)
            .map(|px| px[c])
            .collect()
    }

    /// Assemble an image from per-channel planes of identical size.
    pub fn from_planes(height: usize, width: usize, planes: &[Vec<f64>]) -> Result<Self> {
        let channels = planes.len();
        for p in planes {
            if p.len() != height * width {
                return Err(invalid("plane size does not match image shape"));
            }
        }
        let mut data = vec![0.0; height * width * channels];
        for (c, p) in planes.iter().enumerate() {
            for (i, &v) in p.iter().enumerate() {
                data[i * channels + c] = v;
            }
        }
        Image::new(height, width, channels, data)
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Grayscale via Rec. 601 luma on the stored (gamma-encoded) values,
    /// matching common image tooling. Single-channel images pass through.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let plane: Vec<f64> = self
            .data
            .chunks_exact(3)
            .map(|px| 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2])
            .collect();
        Image::new(self.height, self.width, 1, plane).expect("valid gray image")
    }

    /// Reflect-pad by `pad` pixels on every side, mirroring about the border
    /// pixel without repeating it (requires `pad < min(H, W)`).
    pub fn reflect_pad(&self, pad: usize) -> Result<Image> {
        if pad >= self.height || pad >= self.width {
            return Err(invalid(format!(
                "reflect pad {pad} too large for {}x{} image",
                self.height, self.width
            )));
        }
        let (h, w, c) = (self.height, self.width, self.channels);
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        let mut out = Image::zeros(hp, wp, c);
        for y in 0..hp {
            let sy = mirror_index(y as i64 - pad as i64, h);
            for x in 0..wp {
                let sx = mirror_index(x as i64 - pad as i64, w);
                for ch in 0..c {
                    out.set(y, x, ch, self.get(sy, sx, ch));
                }
            }
        }
        Ok(out)
    }

    /// Circularly shift by (dy, dx): output(y, x) = input(y - dy, x - dx) mod shape.
    pub fn circular_shift(&self, dy: i64, dx: i64) -> Image {
        let (h, w, c) = (self.height as i64, self.width as i64, self.channels);
        let mut out = Image::zeros(self.height, self.width, c);
        for y in 0..self.height {
            let sy = (y as i64 - dy).rem_euclid(h) as usize;
            for x in 0..self.width {
                let sx = (x as i64 - dx).rem_euclid(w) as usize;
                for ch in 0..c {
                    out.set(y, x, ch, self.get(sy, sx, ch));
                }
            }
        }
        out
    }

    /// Crop a rectangle with top-left (y0, x0).
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Image> {
        if y0 + h > self.height || x0 + w > self.width {
            return Err(invalid("crop rectangle outside image"));
        }
        let mut out = Image::zeros(h, w, self.channels);
        for y in 0..h {
            for x in 0..w {
                for c in 0..self.channels {
                    out.set(y, x, c, self.get(y0 + y, x0 + x, c));
                }
            }
        }
        Ok(out)
    }
}

/// Mirror an out-of-range index into [0, n) without repeating the border
/// sample (reflection about the edge pixels).
pub(crate) fn mirror_index(i: i64, n: usize) -> usize {
    let n = n as i64;
    debug_assert!(n > 0);
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Square single-channel patch, the unit the network operates on.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    side: usize,
    data: Vec<f64>,
}

impl Patch {
    pub fn new(side: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != side * side {
            return Err(invalid(format!(
                "patch data length {} does not match side {side}",
                data.len()
            )));
        }
        Ok(Self { side, data })
    }

    pub fn zeros(side: usize) -> Self {
        Self { side, data: vec![0.0; side * side] }
    }

    pub fn constant(side: usize, v: f64) -> Self {
        Self { side, data: vec![v; side * side] }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.side + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.side + x] = v;
    }

    /// Center crop to an odd target side (both sides must share parity so the
    /// center is well defined; the standard pipeline uses odd sides only).
    pub fn center_crop(&self, target: usize) -> Result<Patch> {
        if target > self.side {
            return Err(invalid(format!(
                "crop target {target} larger than side {}",
                self.side
            )));
        }
        if (self.side - target) % 2 != 0 {
            return Err(invalid("center crop requires matching parity"));
        }
        let off = (self.side - target) / 2;
        let mut out = Patch::zeros(target);
        for y in 0..target {
            for x in 0..target {
                out.set(y, x, self.get(y + off, x + off));
            }
        }
        Ok(out)
    }

    /// View a single-channel region of an image as a patch.
    pub fn from_plane_region(
        plane: &[f64],
        width: usize,
        y0: usize,
        x0: usize,
        side: usize,
    ) -> Patch {
        let mut data = Vec::with_capacity(side * side);
        for y in 0..side {
            let row = (y0 + y) * width + x0;
            data.extend_from_slice(&plane[row..row + side]);
        }
        Patch { side, data }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Ordered list of same-shape frames observing one scene.
#[derive(Debug, Clone)]
pub struct Burst {
    frames: Vec<Image>,
}

impl Burst {
    pub fn new(frames: Vec<Image>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| invalid("burst must contain at least one frame"))?;
        if !frames.iter().all(|f| f.same_shape(first)) {
            return Err(Error::InvalidArgument(
                "all burst frames must share height/width/channels".into(),
            ));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn into_frames(self) -> Vec<Image> {
        self.frames
    }
}
