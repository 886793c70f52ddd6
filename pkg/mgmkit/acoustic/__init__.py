from mgmkit.acoustic.stage import (AcousticBatch, AcousticConditioner, acoustic_generate, acoustic_loss,
                                  acoustic_train_step)
