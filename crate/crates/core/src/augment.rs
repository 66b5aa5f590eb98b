//! Key-object QA generation from frame metadata.

use serde_json::Map;

use crate::dataset::tag::{format_coordinate, IMAGE_HEIGHT, IMAGE_WIDTH};
use crate::dataset::{Category, Corpus, Frame, KeyObjectInfo, KeyObjectTag, QaPair, QuestionKind};
use crate::par;

/// Identifies the question/answer template below in exported artifacts.
pub const TEMPLATE_VERSION: &str = "keyobj-v1";

/// A generated QA; `source_object_id` is always set.
pub type AugmentedQa = QaPair;

/// The identification question asked about one key object.
pub fn keyobj_question(tag: &KeyObjectTag) -> String {
    format!(
        "The width and height of the image are {} and {} respectively. {tag} represents the key \
         object that the center coordinates of the bounding box in the {} image are ({},{}). \
         What is the object {tag}? What is the state of it?",
        IMAGE_WIDTH as u32,
        IMAGE_HEIGHT as u32,
        tag.camera,
        format_coordinate(tag.center_x),
        format_coordinate(tag.center_y),
    )
}

fn lower_first(s: &str) -> String {
    let mut chars = s.chars();
    match (chars.next(), chars.clone().next()) {
        // keep acronyms such as "SUV" intact
        (Some(_), Some(next)) if next.is_uppercase() => s.to_string(),
        (Some(c), _) => c.to_lowercase().chain(chars).collect(),
        (None, _) => String::new(),
    }
}

fn clause(s: &str) -> String {
    let s = s.trim();
    lower_first(s.strip_suffix('.').unwrap_or(s).trim_end())
}

/// "White truck." -> "a white truck"; an existing leading article is kept.
fn noun_phrase(description: &str) -> String {
    let body = clause(description);
    let first = body.split_whitespace().next().unwrap_or("").to_lowercase();
    if matches!(first.as_str(), "a" | "an" | "the") {
        return body;
    }
    let article = match body.chars().next() {
        Some(c) if "aeiouAEIOU".contains(c) => "an",
        _ => "a",
    };
    format!("{article} {body}")
}

/// The description-and-state sentence for one key object, or `None` when
/// the metadata lacks a description or a status.
pub fn describe_object(info: &KeyObjectInfo) -> Option<String> {
    let status = info.status.as_deref().map(clause).filter(|s| !s.is_empty())?;
    if info.visual_description.trim().trim_end_matches('.').is_empty() {
        return None;
    }
    Some(format!(
        "{} is {}. It is {status}.",
        info.tag,
        noun_phrase(&info.visual_description)
    ))
}

/// One QA per key object with a description and status, in object-id order.
pub fn generate_keyobj_qas(frame: &Frame) -> Vec<AugmentedQa> {
    frame
        .key_objects
        .iter()
        .filter_map(|(id, info)| {
            let Some(answer) = describe_object(info) else {
                log::info!(
                    "{}/{}: skipping {id}, missing description or status",
                    frame.scene_id,
                    frame.frame_id
                );
                return None;
            };
            Some(QaPair {
                question_id: format!(
                    "{}/{}/{}/keyobj-{id}",
                    frame.scene_id,
                    frame.frame_id,
                    Category::Perception
                ),
                category: Category::Perception,
                kind: QuestionKind::Open,
                question: keyobj_question(&info.tag),
                answer: Some(answer),
                source_object_id: Some(id.clone()),
                extra: Map::new(),
            })
        })
        .collect()
}

/// Generated QAs for the whole corpus, frame by frame in corpus order.
pub fn augment_corpus(corpus: &Corpus) -> Vec<AugmentedQa> {
    par::map(&corpus.frames, generate_keyobj_qas)
        .into_iter()
        .flatten()
        .collect()
}

/// Appends generated QAs to their frames.
pub fn merge_into(corpus: &mut Corpus) -> usize {
    let generated = par::map(&corpus.frames, generate_keyobj_qas);
    let mut added = 0;
    for (frame, qas) in corpus.frames.iter_mut().zip(generated) {
        added += qas.len();
        frame.qas.extend(qas);
    }
    added
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{extract_tags, parse_keyobj_tag, BBox, Camera, ObjectId};
    use std::collections::BTreeMap;

    fn info(tag: &str, desc: &str, status: Option<&str>) -> KeyObjectInfo {
        KeyObjectInfo {
            tag: parse_keyobj_tag(tag).unwrap(),
            category: "Vehicle".into(),
            status: status.map(String::from),
            visual_description: desc.into(),
            bbox: Some(BBox {
                x_min: 0.0,
                y_min: 0.0,
                x_max: 1.0,
                y_max: 1.0,
            }),
            extra: Map::new(),
        }
    }

    fn frame(objects: Vec<KeyObjectInfo>) -> Frame {
        Frame {
            scene_id: "s1".into(),
            frame_id: "f1".into(),
            image_paths: Camera::ALL.iter().map(|c| (*c, format!("{c}.jpg"))).collect(),
            key_objects: objects
                .into_iter()
                .map(|o| (o.tag.object_id.clone(), o))
                .collect::<BTreeMap<_, _>>(),
            qas: vec![],
            extra: Map::new(),
        }
    }

    #[test]
    fn white_truck_example() {
        let f = frame(vec![info(
            "<c4,CAM_FRONT,920.8,383.3>",
            "A white truck to the front of the ego vehicle.",
            Some("Moving"),
        )]);
        let qas = generate_keyobj_qas(&f);
        assert_eq!(qas.len(), 1);
        assert_eq!(
            qas[0].question,
            "The width and height of the image are 1600 and 900 respectively. \
             <c4,CAM_FRONT,920.8,383.3> represents the key object that the center coordinates of \
             the bounding box in the CAM_FRONT image are (920.8,383.3). What is the object \
             <c4,CAM_FRONT,920.8,383.3>? What is the state of it?"
        );
        assert_eq!(
            qas[0].answer.as_deref(),
            Some("<c4,CAM_FRONT,920.8,383.3> is a white truck to the front of the ego vehicle. It is moving.")
        );
        assert_eq!(qas[0].category, Category::Perception);
        assert_eq!(qas[0].kind, QuestionKind::Open);
        assert_eq!(qas[0].source_object_id, Some(ObjectId::new("c4").unwrap()));
    }

    #[test]
    fn article_handling() {
        assert_eq!(noun_phrase("White truck."), "a white truck");
        assert_eq!(noun_phrase("Orange cone"), "an orange cone");
        assert_eq!(noun_phrase("The bus on the left."), "the bus on the left");
        assert_eq!(noun_phrase("An ambulance."), "an ambulance");
        assert_eq!(noun_phrase("SUV parked."), "a SUV parked");
    }

    #[test]
    fn zero_objects_yield_nothing() {
        assert!(generate_keyobj_qas(&frame(vec![])).is_empty());
    }

    #[test]
    fn ordering_follows_object_ids() {
        let f = frame(vec![
            info("<c10,CAM_BACK,10.0,20.0>", "Black sedan.", Some("Parked")),
            info("<c2,CAM_FRONT,30.0,40.0>", "Red bus.", Some("Moving")),
        ]);
        let qas = generate_keyobj_qas(&f);
        let ids: Vec<&str> = qas.iter().map(|q| q.question_id.as_str()).collect();
        assert_eq!(ids, ["s1/f1/perception/keyobj-c2", "s1/f1/perception/keyobj-c10"]);
    }

    #[test]
    fn objects_without_status_or_description_are_skipped() {
        let f = frame(vec![
            info("<c1,CAM_BACK,10.0,20.0>", "Black sedan.", None),
            info("<c2,CAM_FRONT,30.0,40.0>", "  ", Some("Moving")),
            info("<c3,CAM_FRONT,30.0,40.0>", "Red bus.", Some("Moving")),
        ]);
        assert_eq!(generate_keyobj_qas(&f).len(), 1);
    }

    #[test]
    fn generated_question_quotes_the_tag_twice() {
        let f = frame(vec![info("<c7,CAM_BACK_LEFT,12.25,0.0>", "Cyclist.", Some("Moving"))]);
        let q = &generate_keyobj_qas(&f)[0];
        let tags = extract_tags(&q.question);
        let source = &f.key_objects.values().next().unwrap().tag;
        assert_eq!(tags, vec![source.clone(), source.clone()]);
    }
}
