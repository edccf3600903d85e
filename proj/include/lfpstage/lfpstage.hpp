#pragma once

#include "dataset_io.hpp"
#include "dsp.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "features.hpp"
#include "focal_loss.hpp"
#include "model.hpp"
#include "pipeline.hpp"
#include "synth.hpp"
#include "training.hpp"
