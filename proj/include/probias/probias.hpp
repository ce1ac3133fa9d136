#pragma once

#include "probias/autodiff.hpp"
#include "probias/binning.hpp"
#include "probias/bipartite_graph.hpp"
#include "probias/checkpoint.hpp"
#include "probias/code_embedder.hpp"
#include "probias/config.hpp"
#include "probias/cooc_stats.hpp"
#include "probias/corpus.hpp"
#include "probias/doc_encoder.hpp"
#include "probias/error.hpp"
#include "probias/gradcheck.hpp"
#include "probias/graph_encoder.hpp"
#include "probias/io.hpp"
#include "probias/label_attention.hpp"
#include "probias/metrics.hpp"
#include "probias/model.hpp"
#include "probias/optim.hpp"
#include "probias/selfcheck.hpp"
#include "probias/synthetic.hpp"
#include "probias/tensor.hpp"
#include "probias/train.hpp"
