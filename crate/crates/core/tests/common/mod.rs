pub mod coco_oracle;
pub mod voc_corpus;
