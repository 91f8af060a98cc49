//! Lenient extraction of a JSON object from LLM output that may wrap it in
//! prose or code fences.

use serde_json::{Map, Value};

/// Returns the first JSON object in `raw` that `accept` approves of.
///
/// Every `{` is tried as the start of an object, so objects embedded in prose,
/// markdown fences or followed by trailing text are all found.
pub fn find_object<T, F>(raw: &str, mut accept: F) -> Option<T>
where
    F: FnMut(&Map<String, Value>) -> Option<T>,
{
    for (idx, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[idx..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            if let Some(found) = accept(&map) {
                return Some(found);
            }
        }
    }
    None
}
