//! Extraction of the `{"reasoning": ..., "bid_price": ...}` answer.

use serde_json::{Deserializer, Value};

#[derive(Clone, Debug, PartialEq)]
pub struct ParsedBid {
    pub reasoning: String,
    pub bid_price: f64,
}

fn as_bid(v: &Value) -> Option<f64> {
    let x = match v {
        Value::Number(n) => n.as_f64()?,
        Value::String(s) => s.trim().parse().ok()?,
        _ => return None,
    };
    x.is_finite().then_some(x)
}

/// The first JSON object in `text` carrying both a string `reasoning` and a
/// numeric `bid_price`. Surrounding prose and code fences are ignored.
pub fn parse_llm_response(text: &str) -> Option<ParsedBid> {
    for (start, _) in text.match_indices('{') {
        let mut stream = Deserializer::from_str(&text[start..]).into_iter::<Value>();
        let Some(Ok(Value::Object(map))) = stream.next() else {
            continue;
        };
        if let (Some(Value::String(reasoning)), Some(bid)) =
            (map.get("reasoning"), map.get("bid_price").and_then(as_bid))
        {
            return Some(ParsedBid {
                reasoning: reasoning.clone(),
                bid_price: bid,
            });
        }
    }
    None
}
