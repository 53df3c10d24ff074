//! Device screens and the camera-centered prediction space.
//!
//! Screen points are pixels in the coordinates of the current orientation,
//! origin top-left, y down. The prediction space is centimeters on the screen
//! plane with the front camera at the origin, +x to the user's right and +y
//! up, so a phone held in portrait with the camera above the screen sees every
//! on-screen point at negative y.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical screen and camera layout, all in the portrait frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub name: String,
    pub screen_w_px: f64,
    pub screen_h_px: f64,
    pub screen_w_cm: f64,
    pub screen_h_cm: f64,
    /// Camera position relative to the portrait top-left screen corner;
    /// negative y is above the screen's top edge.
    pub camera_x_cm: f64,
    pub camera_y_cm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    Portrait,
    PortraitUpsideDown,
    /// Device turned a quarter counter-clockwise: the camera edge is on the user's left.
    LandscapeLeft,
    /// Device turned a quarter clockwise: the camera edge is on the user's right.
    LandscapeRight,
}

impl Orientation {
    pub const ALL: [Orientation; 4] = [
        Orientation::Portrait,
        Orientation::PortraitUpsideDown,
        Orientation::LandscapeLeft,
        Orientation::LandscapeRight,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Orientation::Portrait => "portrait",
            Orientation::PortraitUpsideDown => "portrait-upside-down",
            Orientation::LandscapeLeft => "landscape-left",
            Orientation::LandscapeRight => "landscape-right",
        }
    }

    pub fn is_landscape(self) -> bool {
        matches!(self, Orientation::LandscapeLeft | Orientation::LandscapeRight)
    }

    pub fn rotated_180(self) -> Orientation {
        match self {
            Orientation::Portrait => Orientation::PortraitUpsideDown,
            Orientation::PortraitUpsideDown => Orientation::Portrait,
            Orientation::LandscapeLeft => Orientation::LandscapeRight,
            Orientation::LandscapeRight => Orientation::LandscapeLeft,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Orientation> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown orientation {s:?}; expected one of portrait, portrait-upside-down, landscape-left, landscape-right"
                ))
            })
    }
}

/// A gaze target in both screen pixels and camera-relative centimeters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GazePoint {
    pub screen_px: [f64; 2],
    pub cam_cm: [f64; 2],
}

impl GazePoint {
    pub fn from_screen(p: [f64; 2], dev: &DeviceSpec, o: Orientation) -> Self {
        GazePoint {
            screen_px: p,
            cam_cm: screen_to_cam(p, dev, o),
        }
    }
}

impl DeviceSpec {
    pub fn new(
        name: impl Into<String>,
        px: [f64; 2],
        cm: [f64; 2],
        camera_cm: [f64; 2],
    ) -> Result<Self> {
        let d = DeviceSpec {
            name: name.into(),
            screen_w_px: px[0],
            screen_h_px: px[1],
            screen_w_cm: cm[0],
            screen_h_cm: cm[1],
            camera_x_cm: camera_cm[0],
            camera_y_cm: camera_cm[1],
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [self.screen_w_px, self.screen_h_px, self.screen_w_cm, self.screen_h_cm];
        if extents.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!(
                "device {:?}: screen extents must be positive",
                self.name
            )));
        }
        if !(self.camera_x_cm.is_finite() && self.camera_y_cm.is_finite()) {
            return Err(Error::Config(format!("device {:?}: camera position not finite", self.name)));
        }
        Ok(())
    }

    /// Screen size in pixels for the given orientation.
    pub fn extent_px(&self, o: Orientation) -> [f64; 2] {
        if o.is_landscape() {
            [self.screen_h_px, self.screen_w_px]
        } else {
            [self.screen_w_px, self.screen_h_px]
        }
    }

    pub fn extent_cm(&self, o: Orientation) -> [f64; 2] {
        if o.is_landscape() {
            [self.screen_h_cm, self.screen_w_cm]
        } else {
            [self.screen_w_cm, self.screen_h_cm]
        }
    }

    /// Camera position in the current orientation's screen frame (cm from the
    /// current top-left corner, y down).
    fn camera_in(&self, o: Orientation) -> [f64; 2] {
        portrait_to_current(
            [self.camera_x_cm, self.camera_y_cm],
            [self.screen_w_cm, self.screen_h_cm],
            o,
        )
    }
}

/// Rotates a portrait-frame point into the frame of orientation `o`.
/// `extent` is the portrait screen size in the same units as `p`.
fn portrait_to_current(p: [f64; 2], extent: [f64; 2], o: Orientation) -> [f64; 2] {
    let [w, h] = extent;
    match o {
        Orientation::Portrait => p,
        Orientation::PortraitUpsideDown => [w - p[0], h - p[1]],
        Orientation::LandscapeLeft => [p[1], w - p[0]],
        Orientation::LandscapeRight => [h - p[1], p[0]],
    }
}

/// Maps a screen pixel (current orientation) to camera-relative centimeters.
pub fn screen_to_cam(p: [f64; 2], dev: &DeviceSpec, o: Orientation) -> [f64; 2] {
    let ext_px = dev.extent_px(o);
    let ext_cm = dev.extent_cm(o);
    let x_cm = p[0] * ext_cm[0] / ext_px[0];
    let y_cm = p[1] * ext_cm[1] / ext_px[1];
    let cam = dev.camera_in(o);
    [x_cm - cam[0], -(y_cm - cam[1])]
}

/// Exact inverse of [`screen_to_cam`].
pub fn cam_to_screen(g: [f64; 2], dev: &DeviceSpec, o: Orientation) -> [f64; 2] {
    let ext_px = dev.extent_px(o);
    let ext_cm = dev.extent_cm(o);
    let cam = dev.camera_in(o);
    let x_cm = g[0] + cam[0];
    let y_cm = cam[1] - g[1];
    [x_cm * ext_px[0] / ext_cm[0], y_cm * ext_px[1] / ext_cm[1]]
}

/// Axis-aligned camera-space rectangle `(min, max)` covered by the screen.
pub fn screen_rect_cm(dev: &DeviceSpec, o: Orientation) -> ([f64; 2], [f64; 2]) {
    let [w, h] = dev.extent_px(o);
    let corners = [[0.0, 0.0], [w, 0.0], [0.0, h], [w, h]].map(|c| screen_to_cam(c, dev, o));
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for c in corners {
        for a in 0..2 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    (lo, hi)
}

/// Clamps a camera-space prediction onto the screen rectangle.
pub fn truncate_to_screen(g: [f64; 2], dev: &DeviceSpec, o: Orientation) -> [f64; 2] {
    let (lo, hi) = screen_rect_cm(dev, o);
    [g[0].clamp(lo[0], hi[0]), g[1].clamp(lo[1], hi[1])]
}

pub fn screen_center_cm(dev: &DeviceSpec, o: Orientation) -> [f64; 2] {
    let [w, h] = dev.extent_px(o);
    screen_to_cam([w / 2.0, h / 2.0], dev, o)
}

/// Devices known to the engine, looked up by name.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviceTable {
    devices: Vec<DeviceSpec>,
}

/// Two synthetic devices; real measurements belong in data files.
pub const BUILTIN_DEVICES: &str = "\
# name,w_px,h_px,w_cm,h_cm,cam_x_cm,cam_y_cm
synthPhone,300,500,6.0,10.0,3.0,-1.0
synthTablet,768,1024,15.0,20.0,7.5,-1.0
";

impl DeviceTable {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_DEVICES, "<builtin>").expect("builtin table parses")
    }

    /// Parses `name,w_px,h_px,w_cm,h_cm,cam_x_cm,cam_y_cm` lines; `#` starts a comment.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut devices: Vec<DeviceSpec> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let perr = |msg: String| Error::Parse {
                file: origin.to_string(),
                line: lineno + 1,
                msg,
            };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 7 {
                return Err(perr(format!("expected 7 fields, found {}", fields.len())));
            }
            let mut nums = [0.0f64; 6];
            for (slot, f) in nums.iter_mut().zip(&fields[1..]) {
                *slot = f.parse().map_err(|_| perr(format!("not a number: {f:?}")))?;
            }
            let dev = DeviceSpec::new(
                fields[0],
                [nums[0], nums[1]],
                [nums[2], nums[3]],
                [nums[4], nums[5]],
            )
            .map_err(|e| perr(e.to_string()))?;
            if devices.iter().any(|d| d.name == dev.name) {
                return Err(perr(format!("duplicate device {:?}", dev.name)));
            }
            devices.push(dev);
        }
        Ok(DeviceTable { devices })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn get(&self, name: &str) -> Result<&DeviceSpec> {
        self.devices
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| Error::UnknownDevice(name.to_string()))
    }

    pub fn devices(&self) -> &[DeviceSpec] {
        &self.devices
    }

    /// Adds `dev`, replacing any existing entry of the same name.
    pub fn upsert(&mut self, dev: DeviceSpec) {
        match self.devices.iter_mut().find(|d| d.name == dev.name) {
            Some(slot) => *slot = dev,
            None => self.devices.push(dev),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# name,w_px,h_px,w_cm,h_cm,cam_x_cm,cam_y_cm\n");
        for d in &self.devices {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                d.name,
                d.screen_w_px,
                d.screen_h_px,
                d.screen_w_cm,
                d.screen_h_cm,
                d.camera_x_cm,
                d.camera_y_cm
            ));
        }
        s
    }
}
