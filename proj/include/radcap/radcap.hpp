#pragma once

#include "radcap/baseline.hpp"
#include "radcap/beam.hpp"
#include "radcap/config.hpp"
#include "radcap/dataset.hpp"
#include "radcap/decoder.hpp"
#include "radcap/encoder.hpp"
#include "radcap/error.hpp"
#include "radcap/glyphs.hpp"
#include "radcap/grammar.hpp"
#include "radcap/io.hpp"
#include "radcap/kernels.hpp"
#include "radcap/metrics.hpp"
#include "radcap/model.hpp"
#include "radcap/ops.hpp"
#include "radcap/params.hpp"
#include "radcap/rng.hpp"
#include "radcap/runconfig.hpp"
#include "radcap/tensor.hpp"
#include "radcap/trainer.hpp"
