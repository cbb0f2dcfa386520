//! GeoJSON helpers. Coordinates are the planar meters of the trip data.

use serde_json::{json, Value};

pub fn point_feature(p: [f64; 2], properties: Value) -> Value {
    json!({
        "type": "Feature",
        "geometry": {"type": "Point", "coordinates": p},
        "properties": properties,
    })
}

pub fn line_feature(coords: &[[f64; 2]], properties: Value) -> Value {
    json!({
        "type": "Feature",
        "geometry": {"type": "LineString", "coordinates": coords},
        "properties": properties,
    })
}

pub fn feature_collection(features: Vec<Value>) -> Value {
    json!({"type": "FeatureCollection", "features": features})
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collection_shape() {
        let fc = feature_collection(vec![point_feature([1.0, 2.0], json!({"a": 1})), line_feature(&[[0.0, 0.0], [1.0, 1.0]], json!({}))]);
        assert_eq!(fc["features"][0]["geometry"]["coordinates"], json!([1.0, 2.0]));
        assert_eq!(fc["features"][1]["geometry"]["type"], "LineString");
        assert_eq!(fc["features"][0]["properties"]["a"], 1);
    }
}
