use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{DataError, Dataset, FeatureSchema, GameRecord, GameSequence, PlayerSample};

#[derive(Deserialize)]
struct PlayerLine {
    player_id: String,
    label: String,
    sequences: Vec<Vec<Map<String, Value>>>,
    #[serde(default)]
    archetypes: Option<Vec<usize>>,
}

#[derive(Serialize)]
struct PlayerLineOut<'a> {
    player_id: &'a str,
    label: &'a str,
    sequences: Vec<Vec<Map<String, Value>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    archetypes: Option<&'a [usize]>,
}

/// Reads a JSON-lines dataset, one player per line, in file order.
pub fn load_dataset(path: &Path, schema: &FeatureSchema) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path)?;
    parse_dataset(BufReader::new(file), schema)
}

/// Parses JSON-lines from any reader. Blank lines are skipped; line numbers
/// in errors are 1-based.
pub fn parse_dataset<R: BufRead>(reader: R, schema: &FeatureSchema) -> Result<Dataset, DataError> {
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| DataError::Line {
            line: lineno,
            message,
        };
        let rec: PlayerLine = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let label = schema
            .label_index(&rec.label)
            .ok_or_else(|| err(format!("unknown label '{}'", rec.label)))?;
        let mut sequences = Vec::with_capacity(rec.sequences.len());
        for seq in &rec.sequences {
            let games = seq
                .iter()
                .map(|g| schema.encode_game(g).map(|features| GameRecord { features }))
                .collect::<Result<Vec<_>, _>>()
                .map_err(err)?;
            sequences.push(GameSequence { games });
        }
        if let Some(a) = &rec.archetypes {
            if a.len() != sequences.len() {
                return Err(err(format!(
                    "{} archetype labels for {} sequences",
                    a.len(),
                    sequences.len()
                )));
            }
        }
        samples.push(PlayerSample {
            player_id: rec.player_id,
            label,
            sequences,
            archetypes: rec.archetypes,
        });
    }
    Ok(Dataset {
        samples,
        width: schema.width(),
    })
}

/// Writes a dataset in the JSON-lines format read by [`load_dataset`].
pub fn write_dataset(path: &Path, dataset: &Dataset, schema: &FeatureSchema) -> Result<(), DataError> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for s in &dataset.samples {
        let line = PlayerLineOut {
            player_id: &s.player_id,
            label: &schema.labels[s.label],
            sequences: s
                .sequences
                .iter()
                .map(|seq| seq.games.iter().map(|g| schema.decode_game(&g.features)).collect())
                .collect(),
            archetypes: s.archetypes.as_deref(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> FeatureSchema {
        FeatureSchema::numeric(&["a".to_string(), "b".to_string()])
    }

    #[test]
    fn one_player_two_sequences() {
        let text = r#"{"player_id":"p1","label":"Burnout","sequences":[[{"a":1,"b":2},{"a":3,"b":4},{"a":5,"b":6}],[{"a":0,"b":0},{"a":1,"b":1},{"a":2,"b":2}]]}"#;
        let ds = parse_dataset(text.as_bytes(), &schema()).unwrap();
        assert_eq!(ds.len(), 1);
        let p = &ds.samples[0];
        assert_eq!(p.label, 1);
        assert_eq!(p.sequences.len(), 2);
        assert!(p.sequences.iter().all(|s| s.len() == 3));
        assert_eq!(p.sequences[0].games[2].features, vec![5.0, 6.0]);
    }

    #[test]
    fn empty_input_is_empty_dataset() {
        let ds = parse_dataset("".as_bytes(), &schema()).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn missing_label_names_line() {
        let text = r#"{"player_id":"p1","sequences":[]}"#;
        match parse_dataset(text.as_bytes(), &schema()) {
            Err(DataError::Line { line, message }) => {
                assert_eq!(line, 1);
                assert!(message.contains("label"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_feature_and_malformed_lines() {
        let text = "{\"player_id\":\"p\",\"label\":\"Sustainer\",\"sequences\":[]}\n{\"player_id\":\"q\",\"label\":\"Sustainer\",\"sequences\":[[{\"zz\":1}]]}";
        assert!(matches!(
            parse_dataset(text.as_bytes(), &schema()),
            Err(DataError::Line { line: 2, .. })
        ));
        assert!(matches!(
            parse_dataset("not json".as_bytes(), &schema()),
            Err(DataError::Line { line: 1, .. })
        ));
    }
}
