use std::sync::LazyLock;

use regex::Regex;

use super::{QaPair, QuestionKind};
use crate::normalize::yes_no;

static OPTIONS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)(?:^|\s)A\.\s.*\sB\.(?:\s|$)|(?i:please select.*options)").unwrap());

static AUXILIARY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)^\s*(?:is|are|am|was|were|do|does|did|will|would|can|could|should|shall|may|might|must|has|have|had)\b",
    )
    .unwrap()
});

/// Question kind from its text and (optional) reference answer.
///
/// Precedence: multiple choice, then yes/no, then open.
pub fn classify_text(question: &str, reference: Option<&str>) -> QuestionKind {
    if OPTIONS.is_match(question) {
        QuestionKind::MultipleChoice
    } else if reference.and_then(yes_no).is_some() || AUXILIARY.is_match(question) {
        QuestionKind::YesNo
    } else {
        QuestionKind::Open
    }
}

pub fn classify_question(qa: &QaPair) -> QuestionKind {
    classify_text(&qa.question, qa.answer.as_deref())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn options_pattern_is_multiple_choice() {
        let q = "What should the ego vehicle do? A. Turn left. B. Stop. C. Accelerate. D. Keep going.";
        assert_eq!(classify_text(q, None), QuestionKind::MultipleChoice);
        let q = "Please select the correct answer from the following options: A. x B. y";
        assert_eq!(classify_text(q, Some("A")), QuestionKind::MultipleChoice);
    }

    #[test]
    fn yes_reference_is_yes_no() {
        assert_eq!(
            classify_text("Would c1 be in the moving direction?", Some("Yes.")),
            QuestionKind::YesNo
        );
        assert_eq!(
            classify_text("Tell me about c1 being in the way.", Some("No")),
            QuestionKind::YesNo
        );
        assert_eq!(classify_text("Is it safe to turn left?", None), QuestionKind::YesNo);
    }

    #[test]
    fn plain_questions_are_open() {
        assert_eq!(
            classify_text("What actions could the ego vehicle take?", None),
            QuestionKind::Open
        );
        assert_eq!(
            classify_text(
                "What are the important objects in the current scene?",
                Some("There is a white truck to the front of the ego vehicle.")
            ),
            QuestionKind::Open
        );
        // "Island" must not trigger the auxiliary "is"
        assert_eq!(classify_text("Island ahead: what now?", None), QuestionKind::Open);
    }

    #[test]
    fn multiple_choice_wins_over_yes_no() {
        let q = "Is the car moving? A. Yes. B. No.";
        assert_eq!(classify_text(q, Some("Yes.")), QuestionKind::MultipleChoice);
    }
}
