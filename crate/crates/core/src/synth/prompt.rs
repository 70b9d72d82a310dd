//! Prompt construction for the two synthesized datasets. The instruction
//! texts are fixed verbatim; only the requested sample count and the
//! paragraph / class label vary. Builders are pure and byte-deterministic.

use super::SynthError;

const VQA_PARAX_HEAD: &str = "You are an assistant which helps formulate a VQA dataset with \
Textual Explanations to train deep learning models. Read the following text and formulate ";

const VQA_PARAX_MID: &str = " samples, as unique as possible, each consisting of a question (Q), \
answer (A) and more information about the answer to help in better understanding it (E). The \
answers should be short, maximum of 3 words. Here is an example for Q, A and E, respectively: \
Q: What sport is being played?, A: baseball, E: they are playing on a baseball diamond with a \
ball and a bat. Also, E should be non-trivial. For example, if Q is: Where is the green tennis \
ball? and A is: above her head, then E should NOT BE: there is a green tennis ball above the \
woman's head. This is considered as trivial. Please generate the output in a single line \
strictly following this format for the ";

const VQA_PARAX_TAIL: &str = " samples, where <r> indicates your response: ";

const VQA_PARAX_END: &str = ". Here is the text:";

/// Maximum triplets one prompt may request.
pub const MAX_TRIPLETS_PER_PROMPT: usize = 6;

/// The output format slot for one triplet.
pub const TRIPLET_SLOT: &str = "{Q:<r>, A:<r>, E:<r>}";

/// Build the paragraph-reformulation prompt: the fixed instruction with the
/// sample count set to `k` and `k` triplet slots in the format line, followed
/// by the paragraph after "Here is the text:".
pub fn build_vqa_parax_prompt(paragraph: &str, k: usize) -> Result<String, SynthError> {
    if paragraph.trim().is_empty() {
        return Err(SynthError::EmptyPrompt("paragraph"));
    }
    if k == 0 || k > MAX_TRIPLETS_PER_PROMPT {
        return Err(SynthError::BadTripletCount(k));
    }
    let slots = vec![TRIPLET_SLOT; k].join(", ");
    Ok(format!(
        "{VQA_PARAX_HEAD}{k}{VQA_PARAX_MID}{k}{VQA_PARAX_TAIL}[{slots}]{VQA_PARAX_END} {paragraph}"
    ))
}

/// Build the class-description prompt: the fixed instruction with the class
/// label substituted, including the 50-word length constraint.
pub fn build_imagenetx_prompt(class_label: &str) -> Result<String, SynthError> {
    if class_label.trim().is_empty() {
        return Err(SynthError::EmptyPrompt("class_label"));
    }
    Ok(format!(
        "You are an assistant which helps humans describe objects. what are physical features \
and characteristics describing a {class_label}? Please answer in a short, brief and concise \
way, with a maximum of 50 words."
    ))
}
