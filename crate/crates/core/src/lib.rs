//! Topological-map localization with a graph convolutional LSTM.

pub mod benchmark;
pub mod diffmath;
pub mod evaluation;
pub mod localizer;
pub mod map_sampler;
pub mod navigation;
pub mod nn;
pub mod pipeline;
pub mod simworld;
pub mod topo_graph;
pub mod trainer;
