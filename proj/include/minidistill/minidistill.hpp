#pragma once

#include "minidistill/bench.hpp"
#include "minidistill/corpus.hpp"
#include "minidistill/error.hpp"
#include "minidistill/io.hpp"
#include "minidistill/losses.hpp"
#include "minidistill/metrics.hpp"
#include "minidistill/model.hpp"
#include "minidistill/optim.hpp"
#include "minidistill/pca.hpp"
#include "minidistill/pipeline.hpp"
#include "minidistill/rng.hpp"
#include "minidistill/tensor.hpp"
#include "minidistill/vocab.hpp"
