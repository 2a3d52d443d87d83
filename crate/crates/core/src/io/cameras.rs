use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::scene::{rotation_is_orthonormal, CameraView};

pub fn read_cameras(path: impl AsRef<Path>) -> Result<Vec<CameraView>> {
    read_cameras_from_str(&std::fs::read_to_string(path)?)
}

/// Parse `{"views": [{fx, fy, cx, cy, width, height, world_to_camera}]}`
/// where `world_to_camera` is a row-major 3x4 `[R | t]`.
pub fn read_cameras_from_str(text: &str) -> Result<Vec<CameraView>> {
    let doc: Value = serde_json::from_str(text)?;
    let views = doc
        .get("views")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::CameraMissingField("views".into()))?;
    views.iter().enumerate().map(|(j, v)| parse_view(j, v)).collect()
}

fn parse_view(j: usize, v: &Value) -> Result<CameraView> {
    let missing = |name: &str| Error::CameraMissingField(format!("views[{j}].{name}"));
    let obj = v.as_object().ok_or_else(|| Error::CameraInvalid {
        view: j,
        reason: "view entry is not an object".into(),
    })?;
    let number = |name: &str| -> Result<f64> {
        let value = obj.get(name).ok_or_else(|| missing(name))?;
        value.as_f64().ok_or_else(|| Error::CameraInvalid {
            view: j,
            reason: format!("{name} is not a number"),
        })
    };
    let size = |name: &str| -> Result<u32> {
        let value = obj.get(name).ok_or_else(|| missing(name))?;
        value
            .as_u64()
            .and_then(|n| u32::try_from(n).ok())
            .ok_or_else(|| Error::CameraInvalid {
                view: j,
                reason: format!("{name} is not an unsigned 32-bit integer"),
            })
    };
    let (fx, fy, cx, cy) = (number("fx")?, number("fy")?, number("cx")?, number("cy")?);
    let (width, height) = (size("width")?, size("height")?);
    let pose = obj
        .get("world_to_camera")
        .ok_or_else(|| missing("world_to_camera"))?
        .as_array()
        .ok_or_else(|| Error::CameraInvalid {
            view: j,
            reason: "world_to_camera is not an array".into(),
        })?;
    if pose.len() != 12 {
        return Err(Error::CameraPoseLength {
            view: j,
            len: pose.len(),
        });
    }
    let m: Vec<f64> = pose
        .iter()
        .map(|x| {
            x.as_f64().ok_or_else(|| Error::CameraInvalid {
                view: j,
                reason: "world_to_camera holds a non-number".into(),
            })
        })
        .collect::<Result<_>>()?;
    let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
    let translation = Vector3::new(m[3], m[7], m[11]);
    if !rotation_is_orthonormal(&rotation) {
        return Err(Error::CameraNotOrthonormal { view: j });
    }
    let view = CameraView::new(fx, fy, cx, cy, width, height, rotation, translation);
    if let Some(reason) = view.problems().into_iter().next() {
        return Err(Error::CameraInvalid { view: j, reason });
    }
    Ok(view)
}

pub fn cameras_to_json(cameras: &[CameraView]) -> Value {
    let views: Vec<Value> = cameras
        .iter()
        .map(|c| {
            let r = &c.rotation;
            let t = &c.translation;
            let pose = [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                t.x,
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                t.y,
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
                t.z,
            ];
            let mut obj = Map::new();
            obj.insert("fx".into(), json!(c.fx));
            obj.insert("fy".into(), json!(c.fy));
            obj.insert("cx".into(), json!(c.cx));
            obj.insert("cy".into(), json!(c.cy));
            obj.insert("width".into(), json!(c.width));
            obj.insert("height".into(), json!(c.height));
            obj.insert("world_to_camera".into(), json!(pose));
            Value::Object(obj)
        })
        .collect();
    json!({ "views": views })
}

pub fn write_cameras(path: impl AsRef<Path>, cameras: &[CameraView]) -> Result<()> {
    let text = serde_json::to_string_pretty(&cameras_to_json(cameras))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
