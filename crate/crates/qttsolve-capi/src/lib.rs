// placeholder while the core library is built
